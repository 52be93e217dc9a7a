"""Parallel-corpus ingestion, subword vocabulary and batching.

The tokenizer is a small deterministic stand-in for SentencePiece: a
BPE-style merge learner produces a unit list, and encoding is greedy
longest-match over that list after whitespace pre-splitting.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import torch

from .errors import ConfigError, EmptyCorpusError, InvalidInputError, ParseError

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1
MAX_LEN = 120

_LANG_TOKEN_RE = re.compile(r"^<2([^<>\s]+)>$")
_WS_RE = re.compile(r"\s+")


def lang_token(lang: str) -> str:
    return f"<2{lang}>"


def normalize(text: str) -> str:
    """Lowercase, collapse runs of whitespace, strip the ends."""
    return _WS_RE.sub(" ", text.lower()).strip()


@dataclass(frozen=True)
class SentencePair:
    src_lang: str
    tgt_lang: str
    src_text: str
    tgt_text: str

    def __post_init__(self):
        if self.src_lang == self.tgt_lang:
            raise InvalidInputError(f"pair languages must differ, got {self.src_lang!r} twice")
        if not normalize(self.src_text) or not normalize(self.tgt_text):
            raise InvalidInputError("pair contains an empty sentence")

    def swapped(self) -> "SentencePair":
        return SentencePair(self.tgt_lang, self.src_lang, self.tgt_text, self.src_text)


@dataclass(frozen=True)
class ParallelCorpus:
    pairs: tuple[SentencePair, ...]
    language_set: frozenset[str] = field(default=frozenset())

    def __post_init__(self):
        langs = frozenset(l for p in self.pairs for l in (p.src_lang, p.tgt_lang))
        object.__setattr__(self, "language_set", langs)

    @classmethod
    def from_pairs(cls, pairs: Iterable[SentencePair]) -> "ParallelCorpus":
        return cls(tuple(pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[SentencePair]:
        return iter(self.pairs)

    def sentences(self) -> Iterator[str]:
        for p in self.pairs:
            yield p.src_text
            yield p.tgt_text


def load_parallel_tsv(path: str | Path) -> ParallelCorpus:
    """Read ``src_lang<TAB>tgt_lang<TAB>src_text<TAB>tgt_text`` lines.

    Blank lines and ``#`` comments are skipped. Any other line that does not
    parse raises :class:`ParseError` carrying its 1-based line number.
    """
    pairs = []
    with open(path, encoding="utf-8", newline="\n") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(f"expected 4 tab-separated fields, found {len(fields)}", line_no)
            src_lang, tgt_lang, src_text, tgt_text = fields
            if not src_lang or not tgt_lang:
                raise ParseError("empty language code", line_no)
            try:
                pairs.append(SentencePair(src_lang, tgt_lang, src_text, tgt_text))
            except InvalidInputError as exc:
                raise ParseError(str(exc), line_no) from exc
    if not pairs:
        raise EmptyCorpusError(f"{path}: no sentence pairs")
    return ParallelCorpus.from_pairs(pairs)


def write_parallel_tsv(corpus: ParallelCorpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in corpus:
            fh.write(f"{p.src_lang}\t{p.tgt_lang}\t{p.src_text}\t{p.tgt_text}\n")


# ---------------------------------------------------------------------------
# Vocabulary


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(default_factory=dict, compare=False)
    lang_token_ids: dict[str, int] = field(default_factory=dict, compare=False)
    max_unit_len: int = field(default=0, compare=False)

    def __post_init__(self):
        if len(self.id_to_token) < 2 or self.id_to_token[PAD_ID] != PAD or self.id_to_token[UNK_ID] != UNK:
            raise ConfigError("vocabulary must start with <pad>, <unk>")
        t2i = {t: i for i, t in enumerate(self.id_to_token)}
        if len(t2i) != len(self.id_to_token):
            raise ConfigError("duplicate tokens in vocabulary")
        langs = {}
        for i, t in enumerate(self.id_to_token):
            m = _LANG_TOKEN_RE.match(t)
            if m:
                langs[m.group(1)] = i
        content = [t for t in self.id_to_token if not _is_special(t)]
        object.__setattr__(self, "token_to_id", t2i)
        object.__setattr__(self, "lang_token_ids", langs)
        object.__setattr__(self, "max_unit_len", max((len(t) for t in content), default=0))

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def unk_id(self) -> int:
        return UNK_ID

    @property
    def d_vcb(self) -> int:
        return len(self.id_to_token)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lang_id(self, lang: str) -> int:
        try:
            return self.lang_token_ids[lang]
        except KeyError:
            raise InvalidInputError(f"language {lang!r} has no {lang_token(lang)} token") from None

    def is_content(self, token_id: int) -> bool:
        return 0 <= token_id < self.d_vcb and not _is_special(self.id_to_token[token_id])

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"EMSVOCAB 1 {self.d_vcb}\n")
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8", newline="\n") as fh:
            lines = fh.read().split("\n")
        header = lines[0].split(" ")
        if len(header) != 3 or header[:2] != ["EMSVOCAB", "1"]:
            raise ParseError(f"bad vocabulary header {lines[0]!r}", 1)
        size = int(header[2])
        tokens = lines[1 : 1 + size]
        if len(tokens) != size or any(t == "" for t in tokens):
            raise ParseError(f"vocabulary declares {size} tokens, file has {len(tokens)}")
        return cls(tuple(tokens))


def _is_special(token: str) -> bool:
    return token in (PAD, UNK) or bool(_LANG_TOKEN_RE.match(token))


def _learn_units(word_counts: Counter, budget: int) -> list[str]:
    """BPE-style merge learning over word types; returns the unit inventory.

    Starts from the character alphabet and repeatedly merges the most frequent
    adjacent symbol pair (ties broken lexicographically) until ``budget`` units
    exist or nothing is left to merge.
    """
    char_counts: Counter = Counter()
    for w, c in word_counts.items():
        for ch in w:
            char_counts[ch] += c
    chars = sorted(char_counts, key=lambda ch: (-char_counts[ch], ch))
    if len(chars) >= budget:
        return chars[:budget]

    units = list(chars)
    known = set(units)
    words = {tuple(w): c for w, c in word_counts.items()}
    while len(units) < budget:
        pair_counts: Counter = Counter()
        for sym, c in words.items():
            for a, b in zip(sym, sym[1:]):
                pair_counts[a, b] += c
        if not pair_counts:
            break
        (a, b), _ = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        merged = a + b
        new_words = {}
        for sym, c in words.items():
            out, i = [], 0
            while i < len(sym):
                if i + 1 < len(sym) and sym[i] == a and sym[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(sym[i])
                    i += 1
            key = tuple(out)
            new_words[key] = new_words.get(key, 0) + c
        words = new_words
        if merged not in known:
            known.add(merged)
            units.append(merged)
    return units


def _segment_word(word: str, units: set[str] | dict[str, int], max_len: int) -> list[str | None]:
    """Greedy longest-match; ``None`` marks a character with no unit."""
    out: list[str | None] = []
    i = 0
    while i < len(word):
        for j in range(min(len(word), i + max_len), i, -1):
            if word[i:j] in units:
                out.append(word[i:j])
                i = j
                break
        else:
            out.append(None)
            i += 1
    return out


def build_vocab(corpus: ParallelCorpus, target_size: int) -> Vocabulary:
    """Build a vocabulary of exactly ``target_size`` entries where possible.

    Layout: ``<pad>``, ``<unk>``, one ``<2xx>`` per language (sorted), then
    content units ordered by how often greedy segmentation of the corpus uses
    them (descending, ties lexicographic). The result may be smaller than
    ``target_size`` when the corpus runs out of merges.
    """
    langs = sorted(corpus.language_set)
    n_special = 2 + len(langs)
    if target_size < n_special + 1:
        raise ConfigError(
            f"target_size {target_size} too small: need at least {n_special + 1} "
            f"(2 special + {len(langs)} language tokens + 1 content unit)"
        )
    word_counts: Counter = Counter()
    for text in corpus.sentences():
        word_counts.update(normalize(text).split(" "))
    word_counts.pop("", None)
    reserved = {PAD, UNK} | {lang_token(l) for l in langs}
    units = [u for u in _learn_units(word_counts, target_size - n_special) if u not in reserved]

    unit_set = set(units)
    max_len = max((len(u) for u in units), default=1)
    usage: Counter = Counter({u: 0 for u in units})
    for w, c in word_counts.items():
        for piece in _segment_word(w, unit_set, max_len):
            if piece is not None:
                usage[piece] += c
    ordered = sorted(units, key=lambda u: (-usage[u], u))
    return Vocabulary((PAD, UNK, *(lang_token(l) for l in langs), *ordered))


def encode_sentence(vocab: Vocabulary, text: str, max_len: int = MAX_LEN) -> list[int]:
    """Map normalized text to content ids, truncated to ``max_len``."""
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    ids: list[int] = []
    t2i = vocab.token_to_id
    unit_len = max(vocab.max_unit_len, 1)
    for word in text.split():
        for piece in _segment_word(word, t2i, unit_len):
            if piece is None or _is_special(piece):
                ids.append(UNK_ID)
            else:
                ids.append(t2i[piece])
            if len(ids) >= max_len:
                return ids
    return ids


def decode_ids(vocab: Vocabulary, ids: Sequence[int]) -> list[str]:
    return [vocab.id_to_token[i] for i in ids]


# ---------------------------------------------------------------------------
# Batching


@dataclass
class Batch:
    src_ids: torch.Tensor  # (B, Ls) long
    tgt_ids: torch.Tensor  # (B, Lt) long
    src_mask: torch.Tensor  # (B, Ls) bool
    tgt_mask: torch.Tensor
    src_lang_ids: torch.Tensor  # (B,) vocabulary ids of <2xx>
    tgt_lang_ids: torch.Tensor
    indices: tuple[int, ...] = ()  # corpus positions of the rows

    @property
    def size(self) -> int:
        return int(self.src_ids.shape[0])

    def __len__(self) -> int:
        return self.size

    def swapped(self) -> "Batch":
        return Batch(
            self.tgt_ids, self.src_ids, self.tgt_mask, self.src_mask,
            self.tgt_lang_ids, self.src_lang_ids, self.indices,
        )


def pad_sequences(seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Left-align rows and fill with the pad id; returns (ids, mask)."""
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros((len(seqs), width), dtype=torch.bool)
    for r, s in enumerate(seqs):
        if len(s):
            ids[r, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
            mask[r, : len(s)] = True
    return ids, mask


def collate(
    encoded: Sequence[tuple[list[int], list[int]]],
    src_lang_ids: Sequence[int],
    tgt_lang_ids: Sequence[int],
    indices: Sequence[int] = (),
) -> Batch:
    src_ids, src_mask = pad_sequences([e[0] for e in encoded])
    tgt_ids, tgt_mask = pad_sequences([e[1] for e in encoded])
    return Batch(
        src_ids, tgt_ids, src_mask, tgt_mask,
        torch.as_tensor(list(src_lang_ids), dtype=torch.long),
        torch.as_tensor(list(tgt_lang_ids), dtype=torch.long),
        tuple(indices),
    )


class EncodedCorpus:
    """Corpus with every sentence pre-encoded once; cheap to re-batch."""

    def __init__(self, corpus: ParallelCorpus, vocab: Vocabulary, max_len: int = MAX_LEN):
        if not len(corpus):
            raise EmptyCorpusError("cannot batch an empty corpus")
        self.corpus = corpus
        self.vocab = vocab
        self.encoded = [
            (
                encode_sentence(vocab, normalize(p.src_text), max_len),
                encode_sentence(vocab, normalize(p.tgt_text), max_len),
            )
            for p in corpus
        ]
        self.src_lang = [vocab.lang_id(p.src_lang) for p in corpus]
        self.tgt_lang = [vocab.lang_id(p.tgt_lang) for p in corpus]

    def __len__(self) -> int:
        return len(self.encoded)

    def batches(self, batch_size: int, seed: int) -> list[Batch]:
        if batch_size < 2:
            raise ConfigError("batch_size must be >= 2: in-batch negatives need at least two pairs")
        order = np.random.default_rng(seed).permutation(len(self.encoded))
        out = []
        for start in range(0, len(order), batch_size):
            rows = [int(i) for i in order[start : start + batch_size]]
            out.append(
                collate(
                    [self.encoded[i] for i in rows],
                    [self.src_lang[i] for i in rows],
                    [self.tgt_lang[i] for i in rows],
                    rows,
                )
            )
        return out


def make_batches(
    corpus: ParallelCorpus,
    vocab: Vocabulary,
    batch_size: int,
    seed: int,
    max_len: int = MAX_LEN,
) -> list[Batch]:
    """Shuffle pairs with a seeded PRNG and cut them into padded batches."""
    if batch_size < 2:
        raise ConfigError("batch_size must be >= 2: in-batch negatives need at least two pairs")
    return EncodedCorpus(corpus, vocab, max_len).batches(batch_size, seed)
