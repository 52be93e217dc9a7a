"""Joint optimisation loop.

Adam (decoupled weight decay) with a linear warm-up then a constant rate.
Everything random in a step is derived from ``(seed, step)`` or
``(seed, epoch)``, so a run resumed from a checkpoint replays the exact
trajectory of an uninterrupted one.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable

import torch

from .corpus import Batch, EncodedCorpus, ParallelCorpus, Vocabulary
from .encoder import EncoderConfig
from .errors import ConfigError, NumericalError
from .model import EMSModel, load_checkpoint, save_checkpoint
from .objectives import Ablations, HeadConfig

log = logging.getLogger(__name__)

CURVE_HEADER = ["step", "lr", "xtr", "cntrs", "joint"]


@dataclass
class TrainConfig:
    lr: float = 3e-4
    warmup_steps: int = 200
    weight_decay: float = 1e-5
    epochs: int = 3
    batch_size: int = 32
    seed: int = 0
    ablations: Ablations = field(default_factory=Ablations)
    checkpoint_every: int = 0
    max_steps: int | None = None
    max_len: int = 120
    grad_clip: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if isinstance(self.ablations, (list, tuple, set, frozenset)):
            self.ablations = Ablations.from_names(self.ablations)
        if not self.lr >= 0:
            raise ConfigError("lr must be >= 0")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        return cls(**{"warmup_steps": 10_000, "batch_size": 152, "epochs": 3, **overrides})


@dataclass
class RunConfig:
    """Everything one training run needs; flattened for the JSON config file."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    vocab_size: int = 1000

    def to_flat(self) -> dict:
        flat = {**asdict(self.encoder), **asdict(self.heads)}
        for f in fields(self.train):
            v = getattr(self.train, f.name)
            flat[f.name] = v.names() if isinstance(v, Ablations) else v
        flat["vocab_size"] = self.vocab_size
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        groups = {"encoder": EncoderConfig, "heads": HeadConfig, "train": TrainConfig}
        kwargs: dict[str, dict] = {k: {} for k in groups}
        known = {"vocab_size"}
        for key, klass in groups.items():
            names = {f.name for f in fields(klass)}
            known |= names
            kwargs[key] = {k: v for k, v in flat.items() if k in names}
        unknown = set(flat) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            EncoderConfig(**kwargs["encoder"]),
            HeadConfig(**kwargs["heads"]),
            TrainConfig(**kwargs["train"]),
            int(flat.get("vocab_size", 1000)),
        )


def lr_at(cfg: TrainConfig, step: int) -> float:
    """Linear ramp to ``cfg.lr`` over ``warmup_steps``, constant afterwards."""
    if step < 1:
        raise ConfigError("steps are 1-based")
    if cfg.warmup_steps == 0 or step >= cfg.warmup_steps:
        return cfg.lr
    return cfg.lr * step / cfg.warmup_steps


class Adam:
    """Adam with decoupled weight decay (``p -= lr * wd * p`` outside the moments)."""

    def __init__(self, named_params: Iterable[tuple[str, torch.Tensor]], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.v = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.t = 0

    @torch.no_grad()
    def step(self, lr: float, weight_decay: float = 0.0) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for n, p in self.params.items():
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            m, v = self.m[n], self.v[n]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            if weight_decay:
                p.mul_(1 - lr * weight_decay)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + self.eps))

    def state(self) -> dict[str, torch.Tensor]:
        out = {f"m.{n}": t for n, t in self.m.items()}
        out.update({f"v.{n}": t for n, t in self.v.items()})
        return out

    def load_state(self, state: dict[str, torch.Tensor], t: int) -> None:
        for n in self.params:
            self.m[n].copy_(state[f"m.{n}"])
            self.v[n].copy_(state[f"v.{n}"])
        self.t = t


@dataclass
class TrainState:
    model: EMSModel
    optimizer: Adam
    step: int = 0

    @classmethod
    def fresh(cls, model: EMSModel, cfg: TrainConfig) -> "TrainState":
        return cls(model, Adam(model.named_parameters(), cfg.beta1, cfg.beta2, cfg.eps), 0)


def step_seed(seed: int, step: int) -> int:
    return (seed * 1_000_003 + step) % (2**63)


def epoch_seed(seed: int, epoch: int) -> int:
    return (seed * 7_919 + epoch) % (2**63)


def train_step(state: TrainState, batch: Batch, cfg: TrainConfig, batch_index: int | None = None) -> dict[str, float]:
    """One forward/backward/update. Mutates ``state`` and returns the loss report."""
    model = state.model
    step = state.step + 1
    model.zero_grad(set_to_none=True)
    losses = model.losses(batch, train_mode=True, rng_seed=step_seed(cfg.seed, step))
    joint = losses["joint"]
    if not torch.isfinite(joint):
        raise NumericalError("non-finite joint loss", step, batch_index)
    joint.backward()
    if cfg.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    lr = lr_at(cfg, step)
    state.optimizer.step(lr, cfg.weight_decay)
    for name, p in model.named_parameters():
        if not bool(torch.isfinite(p).all()):
            raise NumericalError(f"parameter {name} became non-finite", step, batch_index)
    state.step = step
    return {"step": step, "lr": lr, **{k: float(v.detach()) for k, v in losses.items()}}


@dataclass
class TrainResult:
    state: TrainState
    curve: list[dict[str, float]]
    checkpoint: Path | None


def build_model(run: RunConfig, vocab: Vocabulary) -> EMSModel:
    with torch.random.fork_rng():
        torch.manual_seed(run.train.seed)
        return EMSModel(run.encoder, run.heads, vocab.d_vcb, list(vocab.lang_token_ids.values()), run.train.ablations)


def save_state(path: Path, state: TrainState) -> None:
    save_checkpoint(path, state.model, state.step, state.optimizer.state())


def load_state(path: str | Path, cfg: TrainConfig) -> TrainState:
    ck = load_checkpoint(path)
    state = TrainState.fresh(ck.model, cfg)
    if ck.optimizer:
        state.optimizer.load_state(ck.optimizer, ck.step)
    state.step = ck.step
    return state


def train(
    corpus: ParallelCorpus,
    vocab: Vocabulary,
    run: RunConfig,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    stop_at: int | None = None,
) -> TrainResult:
    """Run ``epochs`` passes (or ``max_steps`` steps) of :func:`train_step`.

    With ``out_dir`` set, writes ``curve.csv`` and ``checkpoint.ckpt`` (every
    ``checkpoint_every`` steps and at the end). ``stop_at`` halts early, as if
    the process had been interrupted after that step.
    """
    cfg = run.train
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        state = load_state(resume_from, cfg)
        if state.model.config_dict()["ablations"] != cfg.ablations.names():
            raise ConfigError("checkpoint ablations differ from the run config")
    else:
        state = TrainState.fresh(build_model(run, vocab), cfg)

    data = EncodedCorpus(corpus, vocab, cfg.max_len)
    n_batches = math.ceil(len(data) / cfg.batch_size)
    total = cfg.epochs * n_batches
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    if stop_at is not None:
        total = min(total, stop_at)

    curve_path = out / "curve.csv" if out is not None else None
    ckpt_path = out / "checkpoint.ckpt" if out is not None else None
    curve: list[dict[str, float]] = []
    curve_fh = None
    if curve_path is not None:
        fresh_file = state.step == 0 or not curve_path.exists()
        if not fresh_file:
            _truncate_curve(curve_path, state.step)
        curve_fh = open(curve_path, "w" if fresh_file else "a", newline="")
        writer = csv.writer(curve_fh, lineterminator="\n")
        if fresh_file:
            writer.writerow(CURVE_HEADER)

    state.model.train()
    try:
        epoch = state.step // n_batches
        while state.step < total:
            batches = data.batches(cfg.batch_size, epoch_seed(cfg.seed, epoch))
            for b_idx in range(state.step - epoch * n_batches, n_batches):
                if state.step >= total:
                    break
                row = train_step(state, batches[b_idx], cfg, b_idx)
                curve.append(row)
                if curve_fh is not None:
                    writer.writerow([row[k] if k != "step" else int(row[k]) for k in CURVE_HEADER])
                if ckpt_path is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                    curve_fh.flush()
                    save_state(ckpt_path, state)
                if state.step % 100 == 0:
                    log.info("step %d lr %.2e xtr %.4f cntrs %.4f joint %.4f",
                             state.step, row["lr"], row["xtr"], row["cntrs"], row["joint"])
            epoch += 1
    finally:
        if curve_fh is not None:
            curve_fh.close()
    state.model.eval()
    if ckpt_path is not None:
        save_state(ckpt_path, state)
    return TrainResult(state, curve, ckpt_path)


def _truncate_curve(path: Path, step: int) -> None:
    """Drop rows past ``step`` so a resumed run appends without duplicates."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    kept = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= step]
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(kept)


def read_curve(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
