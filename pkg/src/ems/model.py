"""Full parameter set (encoder + both heads) and the EMSCKPT file format."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .corpus import Batch
from .encoder import Encoder, EncoderConfig, encode_pair
from .errors import ParseError
from .objectives import (
    Ablations,
    ContrastiveHead,
    HeadConfig,
    XtrHead,
    contrastive_loss,
    joint_loss,
    xtr_loss,
)

CKPT_MAGIC = b"EMSCKPT 1\n"


class EMSModel(nn.Module):
    def __init__(
        self,
        enc_cfg: EncoderConfig,
        head_cfg: HeadConfig,
        d_vcb: int,
        lang_token_ids,
        ablations: Ablations = Ablations(),
    ):
        super().__init__()
        self.enc_cfg = enc_cfg
        self.head_cfg = head_cfg
        self.ablations = ablations
        self.d_vcb = d_vcb
        self.encoder = Encoder(enc_cfg, d_vcb)
        self.xtr_head = XtrHead(
            enc_cfg.d,
            d_vcb,
            head_cfg.d_la,
            lang_token_ids,
            bias=head_cfg.head_bias,
            use_lang_tok=not ablations.no_lang_tok,
            shared_embedding=self.encoder.token_embedding.weight if ablations.share_Lemb else None,
        )
        self.cntrs_head = ContrastiveHead(
            enc_cfg.d,
            head_cfg.d_cntrs,
            head_cfg.temperature,
            bias=head_cfg.head_bias,
            use_mlp=not ablations.no_cntrs_mlp,
        )

    @property
    def lang_token_ids(self) -> list[int]:
        return self.xtr_head.lang_token_ids.tolist()

    def losses(self, batch: Batch, train_mode: bool = False, rng_seed: int = 0) -> dict[str, torch.Tensor]:
        """Forward both towers and return ``{xtr, cntrs, joint}``.

        An ablated term is still reported, but computed without a graph so it
        contributes exactly zero gradient.
        """
        U, V, _, _ = encode_pair(self.encoder, batch, train_mode, rng_seed)
        ab = self.ablations
        with torch.set_grad_enabled(torch.is_grad_enabled() and not ab.no_xtr):
            xtr = xtr_loss(self.xtr_head, U, V, batch)
        with torch.set_grad_enabled(torch.is_grad_enabled() and not ab.no_cntrs):
            cntrs = contrastive_loss(self.cntrs_head, U, V)
        return {"xtr": xtr, "cntrs": cntrs, "joint": joint_loss(xtr, cntrs, batch.size, ab)}

    def embed(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Inference path: encoder + mean pooling only, no dropout."""
        with torch.no_grad():
            return self.encoder(ids, mask, None)[1]

    def config_dict(self) -> dict:
        return {
            "encoder": self.enc_cfg.to_dict(),
            "heads": self.head_cfg.to_dict(),
            "ablations": self.ablations.names(),
            "d_vcb": self.d_vcb,
            "lang_token_ids": self.lang_token_ids,
        }

    @classmethod
    def from_config_dict(cls, cfg: dict) -> "EMSModel":
        return cls(
            EncoderConfig(**cfg["encoder"]),
            HeadConfig(**cfg["heads"]),
            cfg["d_vcb"],
            cfg["lang_token_ids"],
            Ablations.from_names(cfg["ablations"]),
        )


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    model: EMSModel
    step: int = 0
    optimizer: dict[str, torch.Tensor] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _tensors_for(model: EMSModel, optimizer: dict[str, torch.Tensor]) -> list[tuple[str, torch.Tensor]]:
    # named_parameters de-duplicates shared storage, so a shared embedding is stored once
    items = [(f"param.{n}", p.detach()) for n, p in model.named_parameters()]
    items += [(f"optim.{n}", t.detach()) for n, t in optimizer.items()]
    return items


def save_checkpoint(path: str | Path, model: EMSModel, step: int = 0, optimizer=None, extra=None) -> None:
    """Write atomically: a temp file in the same directory, then rename."""
    path = Path(path)
    tensors = _tensors_for(model, optimizer or {})
    manifest_entries = []
    offset = 0
    for name, t in tensors:
        manifest_entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.numel() * 4
    manifest = {
        "config": model.config_dict(),
        "step": step,
        "extra": extra or {},
        "tensors": manifest_entries,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for _, t in tensors:
                fh.write(t.to(torch.float32).contiguous().numpy().astype("<f4", copy=False).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CKPT_MAGIC):
        raise ParseError(f"{path}: not an EMSCKPT 1 file")
    pos = len(CKPT_MAGIC)
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    manifest = json.loads(data[pos : pos + n].decode("utf-8"))
    base = pos + n
    model = EMSModel.from_config_dict(manifest["config"])
    params = dict(model.named_parameters())
    optimizer = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=base + entry["offset"]).reshape(shape)
        t = torch.from_numpy(arr.astype(np.float32))
        kind, name = entry["name"].split(".", 1)
        if kind == "param":
            if name not in params:
                raise ParseError(f"{path}: unexpected tensor {name}")
            with torch.no_grad():
                params[name].copy_(t)
        else:
            optimizer[name] = t
    return Checkpoint(model, manifest["step"], optimizer, manifest.get("extra", {}))
