"""Bitext mining on a trained toy model: P/R/F1 as the margin threshold moves.

    python3 scripts/mining_demo.py --run runs/toy/joint_s0 --data runs/toy/data

Held-out pairs give the gold alignment (row i of the source side translates
row i of the target side).
"""

import argparse
from pathlib import Path

import numpy as np

from ems.corpus import Vocabulary, load_parallel_tsv
from ems.evalkit import embed_corpus, margin_matrix, mine_bitext, mining_f1
from ems.model import load_checkpoint


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run", type=Path, required=True, help="training output directory")
    ap.add_argument("--data", type=Path, required=True, help="directory holding heldout.tsv")
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--margin", default="ratio", choices=("ratio", "distance", "absolute"))
    args = ap.parse_args()

    model = load_checkpoint(args.run / "checkpoint.ckpt").model
    vocab = Vocabulary.load(args.run / "vocab.txt")
    corpus = load_parallel_tsv(args.data / "heldout.tsv")
    src = embed_corpus(model, vocab, [p.src_text for p in corpus])
    tgt = embed_corpus(model, vocab, [p.tgt_text for p in corpus])
    gold = [(i, i) for i in range(len(corpus))]

    scores = margin_matrix(src, tgt, args.k, args.margin)
    print("threshold\tmined\tprecision\trecall\tf1")
    for q in (0.0, 0.25, 0.5, 0.75, 0.9):
        threshold = float(np.quantile(scores.max(axis=1), q)) if q else float("-inf")
        res = mine_bitext(src, tgt, args.k, threshold, args.margin)
        m = mining_f1(res, gold)
        print(f"{threshold:.4f}\t{len(res.pairs)}\t{m['precision']:.4f}\t{m['recall']:.4f}\t{m['f1']:.4f}")


if __name__ == "__main__":
    main()
