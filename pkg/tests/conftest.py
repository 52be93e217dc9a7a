import sys
from pathlib import Path

import pytest
import torch

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from ems.corpus import ParallelCorpus, SentencePair, build_vocab, collate  # noqa: E402
from ems.encoder import EncoderConfig  # noqa: E402
from ems.model import EMSModel  # noqa: E402
from ems.objectives import Ablations, HeadConfig  # noqa: E402

TINY_ENC = dict(n_layers=1, n_heads=2, d=8, d_ff=16)
TINY_HEADS = dict(d_la=4, d_cntrs=4)


def tiny_model(ablations=Ablations(), seed=0, d_vcb=16, lang_ids=(2, 3, 4), std=None, dropout=0.1):
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = EMSModel(
            EncoderConfig(**TINY_ENC, dropout_hidden=dropout, dropout_attn=dropout),
            HeadConfig(**TINY_HEADS),
            d_vcb,
            list(lang_ids),
            ablations,
        ).double()
        if std is not None:
            with torch.no_grad():
                for p in model.parameters():
                    p.normal_(0.0, std)
    return model


def tiny_batch():
    """Two pairs over a 16-id vocabulary; language tokens are ids 2, 3, 4."""
    return collate([([5, 6, 7], [8, 9]), ([10, 11], [12, 13, 14])], [2, 3], [3, 4])


@pytest.fixture
def small_corpus():
    return ParallelCorpus.from_pairs(
        [
            SentencePair("en", "de", "the cat sat", "die katze sass"),
            SentencePair("en", "de", "the dog ran", "der hund lief"),
            SentencePair("en", "fr", "the bird sang", "l'oiseau chantait"),
            SentencePair("de", "fr", "der hund", "le chien"),
            SentencePair("en", "de", "the end", "das ende"),
        ]
    )


@pytest.fixture
def small_vocab(small_corpus):
    return build_vocab(small_corpus, 200)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
