"""Training objectives: cross-lingual token reconstruction (XTR), in-batch
contrastive alignment, and their batch-normalised sum.

XTR predicts the bag-of-subwords distribution of a sentence's translation from
``swish(W_fc [lang_vec ; u])`` followed by a vocabulary-sized softmax layer,
and scores it with KL(p_target || q). The contrastive term is a symmetric
InfoNCE over cosine similarities of projected sentence vectors, with the other
pairs in the batch as negatives.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .corpus import Batch
from .errors import ConfigError, DegenerateError, InvalidInputError

ABLATION_NAMES = ("no_lang_tok", "no_cntrs", "no_xtr", "no_cntrs_mlp", "share_Lemb")


@dataclass(frozen=True)
class Ablations:
    no_lang_tok: bool = False
    no_cntrs: bool = False
    no_xtr: bool = False
    no_cntrs_mlp: bool = False
    share_Lemb: bool = False

    def __post_init__(self):
        if self.no_cntrs and self.no_xtr:
            raise ConfigError("no_cntrs and no_xtr together leave no training signal")

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "Ablations":
        names = list(names)
        unknown = [n for n in names if n not in ABLATION_NAMES]
        if unknown:
            raise ConfigError(f"unknown ablation(s) {unknown}; choose from {ABLATION_NAMES}")
        return cls(**{n: True for n in names})

    def names(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name)]


@dataclass
class HeadConfig:
    d_la: int = 32
    d_cntrs: int = 32
    temperature: float = 0.1
    head_bias: bool = True

    def __post_init__(self):
        if self.d_la < 1 or self.d_cntrs < 1:
            raise ConfigError("head sizes must be positive")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def swish(x: torch.Tensor) -> torch.Tensor:
    return x * torch.sigmoid(x)


class XtrHead(nn.Module):
    """Language embedding ``W_la`` (d_la x d_vcb), ``W_fc`` and ``W_emb``.

    With ``shared_embedding`` given, the sentence half of ``W_emb`` (the
    columns multiplying the last ``d`` hidden units) *is* that tensor, so the
    encoder token embedding and the output layer share storage.
    """

    def __init__(
        self,
        d: int,
        d_vcb: int,
        d_la: int,
        lang_token_ids: Sequence[int],
        bias: bool = True,
        use_lang_tok: bool = True,
        shared_embedding: nn.Parameter | None = None,
    ):
        super().__init__()
        self.d, self.d_vcb, self.d_la = d, d_vcb, d_la
        self.use_lang_tok = use_lang_tok
        self.register_buffer("lang_token_ids", torch.as_tensor(sorted(lang_token_ids), dtype=torch.long))
        self.W_la = nn.Parameter(torch.empty(d_la, d_vcb))
        self.fc = nn.Linear(d_la + d, d_la + d, bias=bias)
        if shared_embedding is None:
            self.W_emb_full = nn.Parameter(torch.empty(d_vcb, d_la + d))
            self._shared = None
        else:
            if tuple(shared_embedding.shape) != (d_vcb, d):
                raise ConfigError(f"shared embedding must be {(d_vcb, d)}, got {tuple(shared_embedding.shape)}")
            self.W_emb_lang = nn.Parameter(torch.empty(d_vcb, d_la))
            # plain list keeps the encoder's parameter out of this module's registry
            self._shared = [shared_embedding]
        self.b_emb = nn.Parameter(torch.zeros(d_vcb)) if bias else None
        for name, p in self.named_parameters():
            if p.dim() == 2:
                nn.init.normal_(p, 0.0, 0.02)
            else:
                nn.init.zeros_(p)

    @property
    def shares_embedding(self) -> bool:
        return self._shared is not None

    @property
    def W_emb(self) -> torch.Tensor:
        if self._shared is None:
            return self.W_emb_full
        return torch.cat([self.W_emb_lang, self._shared[0]], dim=1)

    def check_lang_ids(self, lang_ids: torch.Tensor) -> None:
        ok = torch.isin(lang_ids, self.lang_token_ids)
        if not bool(ok.all()):
            bad = lang_ids[~ok].tolist()
            raise InvalidInputError(f"ids {bad} are not language-token ids")

    def language_vectors(self, lang_ids: torch.Tensor) -> torch.Tensor:
        """Rows ``W_la[:, id]`` for each id (zeros when language tokens are ablated)."""
        lang_ids = torch.as_tensor(lang_ids, dtype=torch.long).reshape(-1)
        self.check_lang_ids(lang_ids)
        if not self.use_lang_tok:
            return self.W_la.new_zeros(len(lang_ids), self.d_la)
        return self.W_la[:, lang_ids].T

    def logits(self, pooled: torch.Tensor, lang_ids: torch.Tensor) -> torch.Tensor:
        z = torch.cat([self.language_vectors(lang_ids), pooled], dim=-1)
        return F.linear(swish(self.fc(z)), self.W_emb, self.b_emb)

    def log_distribution(self, pooled: torch.Tensor, lang_ids: torch.Tensor) -> torch.Tensor:
        return torch.log_softmax(self.logits(pooled, lang_ids), dim=-1)


class ContrastiveHead(nn.Module):
    """``h(u) = W_1 relu(W_2 u)``; identity when ``use_mlp`` is False."""

    def __init__(self, d: int, d_cntrs: int, temperature: float, bias: bool = True, use_mlp: bool = True):
        super().__init__()
        if use_mlp and not d_cntrs < d:
            raise ConfigError(f"d_cntrs ({d_cntrs}) must be smaller than d ({d})")
        if temperature <= 0:
            raise ConfigError("temperature must be > 0")
        self.temperature = float(temperature)
        self.use_mlp = use_mlp
        self.W_2 = nn.Linear(d, d, bias=bias)
        self.W_1 = nn.Linear(d, d_cntrs, bias=bias)
        for lin in (self.W_1, self.W_2):
            nn.init.normal_(lin.weight, 0.0, 0.02)
            if lin.bias is not None:
                nn.init.zeros_(lin.bias)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        if not self.use_mlp:
            return pooled
        return self.W_1(torch.relu(self.W_2(pooled)))


# ---------------------------------------------------------------------------
# Functional surface


def target_distribution(ids: Sequence[int] | torch.Tensor, d_vcb: int, dtype=torch.float64) -> torch.Tensor:
    """Bag-of-tokens distribution: ``p[w] = count(w) / len(ids)``."""
    ids = torch.as_tensor(ids, dtype=torch.long).reshape(-1)
    if ids.numel() == 0:
        raise InvalidInputError("target distribution of an empty sentence is undefined")
    if int(ids.min()) < 0 or int(ids.max()) >= d_vcb:
        raise InvalidInputError("token id outside the vocabulary")
    counts = torch.bincount(ids, minlength=d_vcb).to(dtype)
    return counts / ids.numel()


def batch_target_distributions(ids: torch.Tensor, mask: torch.Tensor, d_vcb: int, dtype=torch.float64) -> torch.Tensor:
    """Row-wise :func:`target_distribution` over the real tokens of a padded matrix."""
    m = mask.to(dtype)
    lengths = m.sum(dim=1, keepdim=True)
    out = torch.zeros(ids.shape[0], d_vcb, dtype=dtype)
    out.scatter_add_(1, ids, m)
    return out / lengths


def language_vector(head: XtrHead, lang_id: int) -> torch.Tensor:
    return head.language_vectors(torch.tensor([lang_id]))[0]


def xtr_log_distribution(head: XtrHead, pooled: torch.Tensor, target_lang_id) -> torch.Tensor:
    """Log of ``softmax(W_emb swish(W_fc [lang_vec ; pooled]))``; accepts one row or a batch."""
    single = pooled.dim() == 1
    pooled2 = pooled.unsqueeze(0) if single else pooled
    lang = torch.as_tensor(target_lang_id, dtype=torch.long).reshape(-1)
    if lang.numel() == 1 and pooled2.shape[0] > 1:
        lang = lang.expand(pooled2.shape[0])
    out = head.log_distribution(pooled2, lang)
    return out[0] if single else out


def kl_divergence(p: torch.Tensor, log_q: torch.Tensor) -> torch.Tensor:
    """Row-wise KL(p || q) summed over p's support only (0 log 0 := 0)."""
    support = p > 0
    log_p = torch.where(support, p, torch.ones_like(p)).log()
    terms = torch.where(support, p * (log_p - log_q), torch.zeros_like(log_q))
    return terms.sum(dim=-1)


def xtr_loss(head: XtrHead, U: torch.Tensor, V: torch.Tensor, batch: Batch) -> torch.Tensor:
    """Sum over pairs of KL(p_tgt || q_src) + KL(p_src || q_tgt).

    ``q_src`` comes from the source embedding conditioned on the *target*
    language token, and vice versa.
    """
    d_vcb = head.d_vcb
    p_src = batch_target_distributions(batch.src_ids, batch.src_mask, d_vcb, U.dtype)
    p_tgt = batch_target_distributions(batch.tgt_ids, batch.tgt_mask, d_vcb, V.dtype)
    log_q_src = head.log_distribution(U, batch.tgt_lang_ids)
    log_q_tgt = head.log_distribution(V, batch.src_lang_ids)
    return (kl_divergence(p_tgt, log_q_src) + kl_divergence(p_src, log_q_tgt)).sum()


def project(head: ContrastiveHead, pooled: torch.Tensor) -> torch.Tensor:
    return head(pooled)


def cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    na = a.norm(dim=-1, keepdim=True)
    nb = b.norm(dim=-1, keepdim=True)
    if bool((na == 0).any()) or bool((nb == 0).any()):
        raise DegenerateError("zero-norm vector: cosine similarity undefined")
    return (a / na) @ (b / nb).T


def contrastive_loss_from_cosines(cos: torch.Tensor, temperature: float) -> torch.Tensor:
    """Symmetric InfoNCE on a (B, B) cosine matrix whose diagonal holds positives."""
    if cos.shape[0] < 2:
        raise InvalidInputError("contrastive loss needs at least two pairs")
    logits = cos / temperature
    diag = torch.arange(cos.shape[0])
    fwd = torch.log_softmax(logits, dim=1)[diag, diag]
    bwd = torch.log_softmax(logits, dim=0)[diag, diag]
    return -(fwd + bwd).sum()


def contrastive_loss(head: ContrastiveHead, U: torch.Tensor, V: torch.Tensor) -> torch.Tensor:
    return contrastive_loss_from_cosines(cosine_matrix(head(U), head(V)), head.temperature)


def joint_loss(xtr, cntrs, batch_size: int, ablations: Ablations = Ablations()):
    """``(xtr + cntrs) / batch_size`` with ablated terms dropped."""
    if ablations.no_xtr and ablations.no_cntrs:
        raise ConfigError("no_cntrs and no_xtr together leave no training signal")
    if batch_size < 1:
        raise InvalidInputError("batch_size must be positive")
    total = 0.0
    if not ablations.no_xtr:
        total = total + xtr
    if not ablations.no_cntrs:
        total = total + cntrs
    return total / batch_size
