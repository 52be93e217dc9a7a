"""Toy ablation table: held-out bidirectional P@1 per training variant.

    python3 scripts/toy_ablation.py --out-dir runs/toy --seeds 0 1 2

Each variant runs the full CLI pipeline (gen-toy, train, embed both held-out
sides, retrieve) and the table is printed as TSV.
"""

import argparse
import json
import statistics
import sys
from pathlib import Path

from ems.cli import run

ROOT = Path(__file__).resolve().parents[1]

VARIANTS = {
    "joint": [],
    "no_cntrs": ["no_cntrs"],
    "no_xtr": ["no_xtr"],
    "no_lang_tok": ["no_lang_tok"],
    "no_cntrs_mlp": ["no_cntrs_mlp"],
    "share_Lemb": ["share_Lemb"],
}


def check(code: int, what: str) -> None:
    if code != 0:
        sys.exit(f"{what} failed with exit code {code}")


def one_run(data: Path, out: Path, config: Path, seed: int, ablations: list[str]) -> float:
    ablate = [a for name in ablations for a in ("--ablate", name)]
    check(run(["train", "--config", str(config), "--corpus", str(data / "train.tsv"), "--out-dir", str(out),
               "--seed", str(seed), *ablate]), f"train {out}")
    for side in ("src", "tgt"):
        check(run(["embed", "--checkpoint", str(out / "checkpoint.ckpt"), "--vocab", str(out / "vocab.txt"),
                   "--tsv", str(data / "heldout.tsv"), "--side", side, "--out", str(out / f"{side}.emb")]),
              f"embed {side}")
    metrics = out / "metrics.json"
    check(run(["retrieve", "--queries", str(out / "src.emb"), "--candidates", str(out / "tgt.emb"),
               "--bidirectional", "--metrics-out", str(metrics)]), "retrieve")
    return json.loads(metrics.read_text())["p_at_1"]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, default=Path("runs/toy"))
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "toy.json")
    ap.add_argument("--data-seed", type=int, default=7)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--variants", nargs="+", choices=list(VARIANTS), default=["joint", "no_cntrs", "no_xtr"])
    args = ap.parse_args()

    data = args.out_dir / "data"
    check(run(["gen-toy", "--langs", "3", "--pairs", "2000", "--seed", str(args.data_seed),
               "--out-dir", str(data)]), "gen-toy")
    print("variant\t" + "\t".join(f"seed{s}" for s in args.seeds) + "\tmean")
    for name in args.variants:
        scores = [one_run(data, args.out_dir / f"{name}_s{s}", args.config, s, VARIANTS[name]) for s in args.seeds]
        print(f"{name}\t" + "\t".join(f"{x:.4f}" for x in scores) + f"\t{statistics.mean(scores):.4f}", flush=True)


if __name__ == "__main__":
    main()
