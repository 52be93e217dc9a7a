"""Synthetic parallel corpus with a learnable cross-lingual alignment.

Every sentence is a random sequence of concept indices; each language renders
a concept through its own fixed random lexicon (a bijection), so the two sides
of a pair are the same index sequence written in two alphabets.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import ParallelCorpus, SentencePair, write_parallel_tsv
from .errors import ConfigError


def toy_languages(n_langs: int) -> list[str]:
    if not 2 <= n_langs <= 26:
        raise ConfigError("n_langs must be between 2 and 26")
    return ["t" + c for c in string.ascii_lowercase[:n_langs]]


@dataclass
class ToyData:
    train: ParallelCorpus
    heldout: ParallelCorpus
    lexicons: dict[str, list[str]]


def gen_toy(
    n_langs: int,
    n_pairs: int,
    vocab_per_lang: int = 200,
    seed: int = 0,
    n_heldout: int = 200,
    min_len: int = 3,
    max_len: int = 12,
) -> ToyData:
    """Draw ``n_pairs`` training and ``n_heldout`` held-out pairs.

    No concept sequence occurs twice across both splits, so the held-out set is
    disjoint from training and its gold alignment is unambiguous.
    """
    if n_pairs < 1 or n_heldout < 0:
        raise ConfigError("n_pairs must be >= 1 and n_heldout >= 0")
    if vocab_per_lang < 2 or not 1 <= min_len <= max_len:
        raise ConfigError("bad toy vocabulary or length range")
    langs = toy_languages(n_langs)
    rng = np.random.default_rng(seed)
    lexicons = {}
    for lang in langs:
        perm = rng.permutation(vocab_per_lang)
        lexicons[lang] = [f"{lang}{int(p)}" for p in perm]

    capacity = sum(vocab_per_lang**n for n in range(min_len, max_len + 1))
    if n_pairs + n_heldout > capacity:
        raise ConfigError("not enough distinct sentences for the requested sizes")

    seen: set[tuple[int, ...]] = set()

    def draw() -> SentencePair:
        while True:
            length = int(rng.integers(min_len, max_len + 1))
            seq = tuple(int(c) for c in rng.integers(0, vocab_per_lang, size=length))
            if seq not in seen:
                seen.add(seq)
                break
        a, b = rng.choice(len(langs), size=2, replace=False)
        la, lb = langs[int(a)], langs[int(b)]
        return SentencePair(
            la, lb,
            " ".join(lexicons[la][c] for c in seq),
            " ".join(lexicons[lb][c] for c in seq),
        )

    heldout = [draw() for _ in range(n_heldout)]
    train = [draw() for _ in range(n_pairs)]
    return ToyData(ParallelCorpus.from_pairs(train), ParallelCorpus.from_pairs(heldout), lexicons)


def write_toy(data: ToyData, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"train": out / "train.tsv", "heldout": out / "heldout.tsv"}
    write_parallel_tsv(data.train, paths["train"])
    write_parallel_tsv(data.heldout, paths["heldout"])
    return paths
