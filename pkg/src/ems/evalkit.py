"""Downstream evaluation on frozen sentence embeddings.

Covers cosine P@1 retrieval, margin-based bitext mining with P/R/F1, and
MLP classification probes trained on one language and tested on another.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import Vocabulary, encode_sentence, normalize, pad_sequences
from .errors import ConfigError, DegenerateError, InvalidInputError, ParseError
from .model import EMSModel

MARGINS = ("ratio", "distance", "absolute")
STRATEGIES = ("forward", "backward", "intersect")


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray  # (N, d) float
    labels: list[str]
    lang: str = "mul"
    skipped: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 2:
            raise InvalidInputError("embedding matrix must be 2-D")
        if len(self.labels) != self.vectors.shape[0]:
            raise InvalidInputError(f"{len(self.labels)} labels for {self.vectors.shape[0]} rows")
        if np.isnan(self.vectors).any():
            raise InvalidInputError("embedding matrix contains NaN")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def save(self, path: str | Path) -> None:
        """Binary ``EMSEMB 1 N d lang`` header + float32 rows; labels in ``<path>.labels``."""
        path = Path(path)
        n, d = self.vectors.shape
        with open(path, "wb") as fh:
            fh.write(f"EMSEMB 1 {n} {d} {self.lang}\n".encode("utf-8"))
            fh.write(self.vectors.astype("<f4").tobytes())
        with open(labels_path(path), "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{lab}\n" for lab in self.labels)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingMatrix":
        path = Path(path)
        with open(path, "rb") as fh:
            header = fh.readline().decode("utf-8").rstrip("\n").split(" ")
            if len(header) != 5 or header[:2] != ["EMSEMB", "1"]:
                raise ParseError(f"{path}: bad embedding header {' '.join(header)!r}")
            n, d, lang = int(header[2]), int(header[3]), header[4]
            raw = fh.read()
        if len(raw) != n * d * 4:
            raise ParseError(f"{path}: expected {n * d * 4} payload bytes, found {len(raw)}")
        vectors = np.frombuffer(raw, dtype="<f4").reshape(n, d).astype(np.float64)
        lp = labels_path(path)
        if lp.exists():
            labels = lp.read_text(encoding="utf-8").split("\n")[:n]
        else:
            labels = [str(i) for i in range(n)]
        return cls(vectors, labels, lang)


def labels_path(path: Path) -> Path:
    return path.with_name(path.name + ".labels")


def embed_corpus(
    model: EMSModel,
    vocab: Vocabulary,
    sentences: Sequence[str],
    lang: str = "mul",
    batch_size: int = 64,
    max_len: int = 120,
) -> EmbeddingMatrix:
    """Embed sentences with the encoder only (no heads, no dropout).

    Sentences that are empty after normalization get no row; their indices are
    listed in ``skipped`` and the labels of the remaining rows are the original
    sentence indices.
    """
    if not sentences:
        raise InvalidInputError("no sentences to embed")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    keep, ids, skipped = [], [], []
    for i, s in enumerate(sentences):
        text = normalize(s)
        if not text:
            skipped.append(i)
            continue
        keep.append(i)
        ids.append(encode_sentence(vocab, text, max_len))
    chunks = []
    model.eval()
    for start in range(0, len(ids), batch_size):
        tok, mask = pad_sequences(ids[start : start + batch_size])
        chunks.append(model.embed(tok, mask).to(torch.float64).numpy())
    d = model.enc_cfg.d
    vectors = np.concatenate(chunks) if chunks else np.zeros((0, d))
    return EmbeddingMatrix(vectors, [str(i) for i in keep], lang, skipped)


# ---------------------------------------------------------------------------
# Retrieval


def _as_array(x) -> np.ndarray:
    return np.asarray(x.vectors if isinstance(x, EmbeddingMatrix) else x, dtype=np.float64)


def cosine_sim(a, b) -> np.ndarray:
    a, b = _as_array(a), _as_array(b)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if (na == 0).any() or (nb == 0).any():
        raise DegenerateError("zero-norm embedding: cosine undefined")
    return (a / na) @ (b / nb).T


def _gold_array(gold, n: int) -> np.ndarray:
    if isinstance(gold, Mapping):
        missing = [q for q in range(n) if q not in gold]
        if missing:
            raise InvalidInputError(f"gold has no target for queries {missing[:5]}")
        return np.array([gold[q] for q in range(n)])
    arr = np.asarray(gold)
    if arr.shape != (n,):
        raise InvalidInputError(f"gold must map all {n} queries")
    return arr


def retrieve_p1(queries, candidates, gold=None) -> float:
    """Fraction of queries whose most cosine-similar candidate is the gold one.

    ``gold`` maps query index to candidate index (identity when None). Ties go
    to the lowest candidate index.
    """
    q, c = _as_array(queries), _as_array(candidates)
    if q.shape[1] != c.shape[1]:
        raise InvalidInputError(f"dimension mismatch {q.shape[1]} vs {c.shape[1]}")
    if gold is None:
        if len(q) != len(c):
            raise InvalidInputError("identity gold needs equal query and candidate counts")
        gold = np.arange(len(q))
    g = _gold_array(gold, len(q))
    if len(g) and (g.min() < 0 or g.max() >= len(c)):
        raise InvalidInputError("gold index out of candidate range")
    best = np.argmax(cosine_sim(q, c), axis=1)
    return float(np.mean(best == g))


def invert_gold(gold, n_queries: int) -> dict[int, int]:
    g = _gold_array(gold, n_queries)
    inv: dict[int, int] = {}
    for qi, ci in enumerate(g.tolist()):
        if ci in inv:
            raise InvalidInputError(f"gold is not one-to-one at candidate {ci}")
        inv[ci] = qi
    return inv


def bidirectional_p1(emb_a, emb_b, gold=None) -> float:
    """Mean of A->B and B->A P@1; ``gold`` (A->B) must be one-to-one."""
    n_a, n_b = len(_as_array(emb_a)), len(_as_array(emb_b))
    if gold is None:
        if n_a != n_b:
            raise InvalidInputError("identity gold needs equal sizes")
        gold = np.arange(n_a)
    inv = invert_gold(gold, n_a)
    if len(inv) != n_b:
        raise InvalidInputError("gold must cover every B row for the reverse direction")
    ab = retrieve_p1(emb_a, emb_b, gold)
    ba = retrieve_p1(emb_b, emb_a, inv)
    return (ab + ba) / 2


# ---------------------------------------------------------------------------
# Margin-based mining


def margin_score(x, y, knn_x, knn_y, margin: str = "ratio") -> float:
    """Score one candidate pair against its neighbourhoods.

    ``knn_x`` are the k nearest neighbours of ``x`` among the y-side, ``knn_y``
    those of ``y`` among the x-side (either may include the pair itself).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    knn_x = np.atleast_2d(np.asarray(knn_x, dtype=np.float64))
    knn_y = np.atleast_2d(np.asarray(knn_y, dtype=np.float64))
    if len(knn_x) < 1 or len(knn_y) < 1:
        raise InvalidInputError("k must be >= 1")
    cos = cosine_sim(x[None], y[None])[0, 0]
    fwd = cosine_sim(x[None], knn_x)[0].sum() / (2 * len(knn_x))
    bwd = cosine_sim(y[None], knn_y)[0].sum() / (2 * len(knn_y))
    return _apply_margin(cos, fwd + bwd, margin)


def _apply_margin(cos, denom, margin: str):
    if margin == "ratio":
        if np.any(denom == 0):
            raise DegenerateError("zero neighbourhood mean: ratio margin undefined")
        return cos / denom
    if margin == "distance":
        return cos - denom
    if margin == "absolute":
        return cos
    raise ConfigError(f"unknown margin {margin!r}; choose from {MARGINS}")


def knn_mean_similarity(sim: np.ndarray, k: int) -> np.ndarray:
    """Mean of each row's k largest similarities."""
    k = min(k, sim.shape[1])
    top = np.partition(sim, sim.shape[1] - k, axis=1)[:, sim.shape[1] - k :]
    return top.mean(axis=1)


def margin_matrix(emb_a, emb_b, k: int = 4, margin: str = "ratio") -> np.ndarray:
    """Margin score for every (a, b) pair."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    sim = cosine_sim(emb_a, emb_b)
    fwd = knn_mean_similarity(sim, k)
    bwd = knn_mean_similarity(sim.T, k)
    denom = fwd[:, None] / 2 + bwd[None, :] / 2
    return _apply_margin(sim, denom, margin)


@dataclass
class MiningResult:
    pairs: list[tuple[int, int, float]]
    threshold: float

    def pair_set(self) -> set[tuple[int, int]]:
        return {(s, t) for s, t, _ in self.pairs}

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for s, t, score in self.pairs:
                fh.write(f"{score:.9g}\t{s}\t{t}\n")


def mine_bitext(
    emb_a,
    emb_b,
    k: int = 4,
    threshold: float = float("-inf"),
    margin: str = "ratio",
    strategy: str = "intersect",
) -> MiningResult:
    """Mine translation pairs between two sets by margin score.

    ``forward`` keeps each a-row's best b, ``backward`` each b-row's best a,
    ``intersect`` only mutual bests. Argmax ties go to the lower index.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    scores = margin_matrix(emb_a, emb_b, k, margin)
    fwd_best = np.argmax(scores, axis=1)
    bwd_best = np.argmax(scores, axis=0)
    found: set[tuple[int, int]] = set()
    if strategy in ("forward", "intersect"):
        fwd = {(i, int(j)) for i, j in enumerate(fwd_best)}
    if strategy in ("backward", "intersect"):
        bwd = {(int(i), j) for j, i in enumerate(bwd_best)}
    if strategy == "forward":
        found = fwd
    elif strategy == "backward":
        found = bwd
    else:
        found = fwd & bwd
    pairs = [(i, j, float(scores[i, j])) for i, j in found if scores[i, j] >= threshold]
    pairs.sort(key=lambda p: (-p[2], p[0], p[1]))
    return MiningResult(pairs, threshold)


def mining_f1(result: MiningResult | set, gold: Sequence[tuple[int, int]] | set) -> dict[str, float]:
    gold_set = {(int(s), int(t)) for s, t in gold}
    if not gold_set:
        raise InvalidInputError("gold pairs must be non-empty")
    found = result.pair_set() if isinstance(result, MiningResult) else set(result)
    tp = len(found & gold_set)
    precision = tp / len(found) if found else 0.0
    recall = tp / len(gold_set)
    f1 = 2 * precision * recall / (precision + recall) if tp else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def read_gold(path: str | Path) -> list[tuple[int, int]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected src_index<TAB>tgt_index", line_no)
            try:
                out.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(f"non-integer index in {line!r}", line_no) from None
    return out


def write_gold(pairs: Sequence[tuple[int, int]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{s}\t{t}\n" for s, t in pairs)


# ---------------------------------------------------------------------------
# Zero-shot probes


@dataclass
class ProbeConfig:
    n_classes: int
    hidden_sizes: tuple[int, ...] = (128,)
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("a probe needs at least two classes")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")


@dataclass
class Probe:
    net: nn.Sequential
    cfg: ProbeConfig

    def predict(self, emb) -> np.ndarray:
        x = torch.as_tensor(_as_array(emb).copy(), dtype=torch.float32)
        with torch.no_grad():
            return self.net(x).argmax(dim=1).numpy()


def _mlp(d_in: int, hidden: Sequence[int], n_out: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    for h in hidden:
        layers += [nn.Linear(d_in, h), nn.ReLU()]
        d_in = h
    layers.append(nn.Linear(d_in, n_out))
    return nn.Sequential(*layers)


def train_probe(train_emb, labels: Sequence[int], cfg: ProbeConfig) -> Probe:
    """Fit an MLP classifier on frozen embeddings (the encoder is never touched)."""
    y = np.asarray(labels, dtype=np.int64)
    x_np = _as_array(train_emb)
    if len(y) != len(x_np):
        raise InvalidInputError(f"{len(y)} labels for {len(x_np)} embeddings")
    if len(np.unique(y)) < 2:
        raise ConfigError("training labels contain a single class")
    if y.min() < 0 or y.max() >= cfg.n_classes:
        raise InvalidInputError("label outside [0, n_classes)")
    g = torch.Generator().manual_seed(cfg.seed)
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed)
        net = _mlp(x_np.shape[1], cfg.hidden_sizes, cfg.n_classes)
    x = torch.as_tensor(x_np.copy(), dtype=torch.float32)
    yt = torch.as_tensor(y)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    loss_fn = nn.CrossEntropyLoss()
    for _ in range(cfg.epochs):
        order = torch.randperm(len(x), generator=g)
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            opt.zero_grad()
            loss_fn(net(x[idx]), yt[idx]).backward()
            opt.step()
    net.eval()
    return Probe(net, cfg)


def eval_probe(probe: Probe, test_emb, labels: Sequence[int]) -> float:
    y = np.asarray(labels)
    pred = probe.predict(test_emb)
    if len(y) != len(pred):
        raise InvalidInputError(f"{len(y)} labels for {len(pred)} embeddings")
    return float(np.mean(pred == y))


def read_labels(path: str | Path) -> list[int]:
    with open(path, encoding="utf-8") as fh:
        return [int(line) for line in fh.read().split()]
