"""Shared transformer encoder with masked mean pooling.

Pre-norm layers, learned absolute positions, ReLU feed-forward. Dropout draws
from an explicit ``torch.Generator`` so that a training step is reproducible
from ``(params, batch, seed)`` alone.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .corpus import Batch
from .errors import ConfigError, InvalidInputError


@dataclass
class EncoderConfig:
    n_layers: int = 2
    n_heads: int = 4
    d: int = 64
    d_ff: int = 256
    dropout_hidden: float = 0.1
    dropout_attn: float = 0.1
    max_positions: int = 120

    def __post_init__(self):
        if self.n_layers < 1 or self.n_heads < 1 or self.d < 1 or self.d_ff < 1:
            raise ConfigError("encoder sizes must be positive")
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        for p in (self.dropout_hidden, self.dropout_attn):
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"dropout {p} outside [0, 1)")
        if self.max_positions < 120:
            raise ConfigError("max_positions must be >= 120")

    @classmethod
    def full_scale(cls) -> "EncoderConfig":
        return cls(n_layers=6, n_heads=16, d=1024, d_ff=4096)

    def to_dict(self) -> dict:
        return asdict(self)


def dropout(x: torch.Tensor, p: float, generator: torch.Generator | None) -> torch.Tensor:
    """Inverted dropout; identity when ``generator`` is None or ``p`` is 0."""
    if generator is None or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


def init_weights(module: nn.Module) -> None:
    """normal(0, 0.02) for weights and embeddings, zero biases, unit norm gains."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.normal_(m.weight, 0.0, 0.02)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class SelfAttention(nn.Module):
    def __init__(self, d: int, n_heads: int, p_attn: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        self.p_attn = p_attn

    def forward(self, x: torch.Tensor, mask: torch.Tensor, generator: torch.Generator | None) -> torch.Tensor:
        B, L, d = x.shape

        def heads(t):
            return t.view(B, L, self.n_heads, self.d_head).transpose(1, 2)

        q, k, v = heads(self.q(x)), heads(self.k(x)), heads(self.v(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        # pad keys get zero weight; every row has at least one real key
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        probs = dropout(torch.softmax(scores, dim=-1), self.p_attn, generator)
        ctx = (probs @ v).transpose(1, 2).reshape(B, L, d)
        return self.out(ctx)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.norm_attn = nn.LayerNorm(cfg.d)
        self.attn = SelfAttention(cfg.d, cfg.n_heads, cfg.dropout_attn)
        self.norm_ff = nn.LayerNorm(cfg.d)
        self.ff_in = nn.Linear(cfg.d, cfg.d_ff)
        self.ff_out = nn.Linear(cfg.d_ff, cfg.d)
        self.p_hidden = cfg.dropout_hidden

    def forward(self, x, mask, generator):
        x = x + dropout(self.attn(self.norm_attn(x), mask, generator), self.p_hidden, generator)
        h = self.ff_out(torch.relu(self.ff_in(self.norm_ff(x))))
        return x + dropout(h, self.p_hidden, generator)


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, d_vcb: int):
        super().__init__()
        self.cfg = cfg
        self.token_embedding = nn.Embedding(d_vcb, cfg.d)
        self.position_embedding = nn.Embedding(cfg.max_positions, cfg.d)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))
        self.final_norm = nn.LayerNorm(cfg.d)
        init_weights(self)

    def forward(
        self,
        ids: torch.Tensor,
        mask: torch.Tensor,
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Return ``(hidden (B, L, d), pooled (B, d))``.

        ``generator`` switches dropout on; pass None for inference.
        """
        if ids.shape != mask.shape or ids.dim() != 2:
            raise InvalidInputError(f"ids {tuple(ids.shape)} and mask {tuple(mask.shape)} must be equal 2-D shapes")
        mask = mask.bool()
        if not bool(mask.any(dim=1).all()):
            raise InvalidInputError("every row needs at least one real token")
        L = ids.shape[1]
        if L > self.cfg.max_positions:
            raise InvalidInputError(f"sequence length {L} exceeds max_positions {self.cfg.max_positions}")
        pos = torch.arange(L, device=ids.device)
        x = self.token_embedding(ids) + self.position_embedding(pos)[None]
        x = dropout(x, self.cfg.dropout_hidden, generator)
        for layer in self.layers:
            x = layer(x, mask, generator)
        hidden = self.final_norm(x)
        return hidden, mean_pool(hidden, mask)


def mean_pool(hidden: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Average hidden states over real (mask=1) positions."""
    m = mask.to(hidden.dtype).unsqueeze(-1)
    return (hidden * m).sum(dim=1) / m.sum(dim=1)


def _generator(train_mode: bool, rng_seed: int) -> torch.Generator | None:
    if not train_mode:
        return None
    g = torch.Generator()
    g.manual_seed(rng_seed)
    return g


def encode(
    encoder: Encoder,
    ids: torch.Tensor,
    mask: torch.Tensor,
    train_mode: bool = False,
    rng_seed: int = 0,
) -> tuple[torch.Tensor, torch.Tensor]:
    return encoder(ids, mask, _generator(train_mode, rng_seed))


def encode_pair(
    encoder: Encoder,
    batch: Batch,
    train_mode: bool = False,
    rng_seed: int = 0,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Run both sides of ``batch`` through the one shared encoder.

    Returns ``(U, V, hidden_src, hidden_tgt)``. A single dropout stream is
    consumed source side first.
    """
    g = _generator(train_mode, rng_seed)
    hidden_src, U = encoder(batch.src_ids, batch.src_mask, g)
    hidden_tgt, V = encoder(batch.tgt_ids, batch.tgt_mask, g)
    return U, V, hidden_src, hidden_tgt
