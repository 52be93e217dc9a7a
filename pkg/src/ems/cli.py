"""Command-line entry point: ``ems <command> [options]``.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .corpus import Vocabulary, build_vocab, load_parallel_tsv
from .errors import (
    ConfigError,
    DegenerateError,
    EmptyCorpusError,
    InvalidInputError,
    NumericalError,
    ParseError,
)
from .evalkit import (
    MARGINS,
    STRATEGIES,
    EmbeddingMatrix,
    ProbeConfig,
    bidirectional_p1,
    embed_corpus,
    eval_probe,
    mine_bitext,
    mining_f1,
    read_gold,
    read_labels,
    retrieve_p1,
    train_probe,
)
from .model import load_checkpoint
from .objectives import ABLATION_NAMES
from .toy import gen_toy, write_toy
from .trainer import RunConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("ems")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# flags that override keys of the flat JSON config
_TRAIN_OVERRIDES = {
    "lr": float,
    "warmup_steps": int,
    "weight_decay": float,
    "epochs": int,
    "batch_size": int,
    "max_steps": int,
    "checkpoint_every": int,
    "n_layers": int,
    "n_heads": int,
    "d": int,
    "d_ff": int,
    "d_la": int,
    "d_cntrs": int,
    "temperature": float,
    "vocab_size": int,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ems", description="Cross-lingual sentence embeddings: train, embed, evaluate.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp):
        sp.add_argument("--metrics-out", type=Path, help="write metrics JSON here")
        sp.add_argument("--record-time", action="store_true", help="include wall_seconds in the metrics JSON")
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    sp = sub.add_parser("gen-toy", help="write a synthetic parallel corpus (train.tsv, heldout.tsv)")
    sp.add_argument("--langs", type=int, default=3)
    sp.add_argument("--pairs", type=int, default=2000)
    sp.add_argument("--heldout", type=int, default=200)
    sp.add_argument("--vocab-per-lang", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", type=Path, required=True)
    common(sp)

    sp = sub.add_parser("build-vocab", help="build a subword vocabulary from a TSV corpus")
    sp.add_argument("--corpus", type=Path, required=True)
    sp.add_argument("--size", type=int, required=True, help="target vocabulary size incl. special tokens")
    sp.add_argument("--out", type=Path, required=True)
    common(sp)

    sp = sub.add_parser("train", help="train the dual encoder with the joint objective")
    sp.add_argument("--config", type=Path, help="flat JSON config (encoder, head and training fields)")
    sp.add_argument("--corpus", type=Path, required=True)
    sp.add_argument("--vocab", type=Path, help="vocabulary file; built from the corpus when omitted")
    sp.add_argument("--out-dir", type=Path, required=True)
    sp.add_argument("--ablate", action="append", default=[], choices=ABLATION_NAMES,
                    help="ablation switch, repeatable")
    sp.add_argument("--resume", type=Path, help="checkpoint to resume from")
    sp.add_argument("--seed", type=int)
    for key, typ in _TRAIN_OVERRIDES.items():
        sp.add_argument("--" + key.replace("_", "-"), dest=key, type=typ)
    common(sp)

    sp = sub.add_parser("embed", help="export sentence embeddings from a checkpoint")
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--vocab", type=Path, required=True)
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", type=Path, help="text file, one sentence per line")
    src.add_argument("--tsv", type=Path, help="parallel TSV; pick a side with --side")
    sp.add_argument("--side", choices=("src", "tgt"), default="src")
    sp.add_argument("--lang", default="mul")
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--out", type=Path, required=True)
    common(sp)

    sp = sub.add_parser("retrieve", help="cosine P@1 retrieval")
    sp.add_argument("--queries", type=Path, required=True)
    sp.add_argument("--candidates", type=Path, required=True)
    sp.add_argument("--gold", type=Path, help="TSV query_index<TAB>candidate_index; identity when omitted")
    sp.add_argument("--bidirectional", action="store_true", help="average both retrieval directions")
    common(sp)

    sp = sub.add_parser("mine", help="margin-based bitext mining")
    sp.add_argument("--src", type=Path, required=True)
    sp.add_argument("--tgt", type=Path, required=True)
    sp.add_argument("--k", type=int, default=4)
    sp.add_argument("--threshold", type=float, default=float("-inf"))
    sp.add_argument("--margin", choices=MARGINS, default="ratio")
    sp.add_argument("--strategy", choices=STRATEGIES, default="intersect")
    sp.add_argument("--out", type=Path, help="mined pairs TSV (score, src, tgt)")
    sp.add_argument("--gold", type=Path, help="gold pairs TSV for P/R/F1")
    common(sp)

    sp = sub.add_parser("probe", help="zero-shot MLP classification probe")
    sp.add_argument("--train-emb", type=Path, required=True)
    sp.add_argument("--train-labels", type=Path, required=True)
    sp.add_argument("--test-emb", type=Path, required=True)
    sp.add_argument("--test-labels", type=Path, required=True)
    sp.add_argument("--hidden", type=int, nargs="*", default=[128])
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--seed", type=int, default=0)
    common(sp)
    return p


def _cmd_gen_toy(args) -> dict:
    data = gen_toy(args.langs, args.pairs, args.vocab_per_lang, args.seed, args.heldout)
    paths = write_toy(data, args.out_dir)
    print(f"wrote {len(data.train)} training pairs to {paths['train']}")
    print(f"wrote {len(data.heldout)} held-out pairs to {paths['heldout']}")
    return {}


def _cmd_build_vocab(args) -> dict:
    vocab = build_vocab(load_parallel_tsv(args.corpus), args.size)
    vocab.save(args.out)
    print(f"vocabulary of {vocab.d_vcb} tokens ({len(vocab.lang_token_ids)} languages) -> {args.out}")
    return {}


def _run_config(args) -> RunConfig:
    flat = {}
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            flat = json.load(fh)
        if not isinstance(flat, dict):
            raise ConfigError("config JSON must be an object")
    for key in _TRAIN_OVERRIDES:
        val = getattr(args, key)
        if val is not None:
            flat[key] = val
    if args.seed is not None:
        flat["seed"] = args.seed
    if args.ablate:
        flat["ablations"] = sorted(set(flat.get("ablations", [])) | set(args.ablate))
    return RunConfig.from_flat(flat)


def _cmd_train(args) -> dict:
    run = _run_config(args)
    corpus = load_parallel_tsv(args.corpus)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    if args.vocab is not None:
        vocab = Vocabulary.load(args.vocab)
    else:
        vocab = build_vocab(corpus, run.vocab_size)
        vocab.save(args.out_dir / "vocab.txt")
    with open(args.out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(run.to_flat(), fh, indent=2, sort_keys=True)
    result = train(corpus, vocab, run, args.out_dir, resume_from=args.resume)
    last = result.curve[-1] if result.curve else None
    variant = ",".join(run.train.ablations.names()) or "joint"
    print(f"trained [{variant}] to step {result.state.step}; checkpoint {result.checkpoint}")
    if last:
        print(f"final losses: xtr {last['xtr']:.4f} cntrs {last['cntrs']:.4f} joint {last['joint']:.4f}")
    return {"steps": result.state.step}


def _cmd_embed(args) -> dict:
    ck = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    if args.input is not None:
        sentences = args.input.read_text(encoding="utf-8").split("\n")
        if sentences and sentences[-1] == "":
            sentences.pop()
    else:
        corpus = load_parallel_tsv(args.tsv)
        sentences = [p.src_text if args.side == "src" else p.tgt_text for p in corpus]
    emb = embed_corpus(ck.model, vocab, sentences, args.lang, args.batch_size)
    emb.save(args.out)
    print(f"embedded {len(emb)} sentences (d={emb.vectors.shape[1]}) -> {args.out}")
    if emb.skipped:
        print(f"skipped {len(emb.skipped)} empty sentences at indices {emb.skipped[:10]}")
    return {}


def _cmd_retrieve(args) -> dict:
    q = EmbeddingMatrix.load(args.queries)
    c = EmbeddingMatrix.load(args.candidates)
    gold = None
    if args.gold is not None:
        pairs = read_gold(args.gold)
        gold = dict(pairs)
        if len(gold) != len(pairs):
            raise InvalidInputError("gold maps a query more than once")
    if args.bidirectional:
        p1 = bidirectional_p1(q, c, gold)
    else:
        p1 = retrieve_p1(q, c, gold)
    print(f"P@1 = {p1:.4f} ({'bidirectional' if args.bidirectional else 'queries -> candidates'}, {len(q)} queries)")
    return {"p_at_1": p1}


def _cmd_mine(args) -> dict:
    a = EmbeddingMatrix.load(args.src)
    b = EmbeddingMatrix.load(args.tgt)
    result = mine_bitext(a, b, args.k, args.threshold, args.margin, args.strategy)
    if args.out is not None:
        result.save(args.out)
    print(f"mined {len(result.pairs)} pairs ({args.margin} margin, k={args.k}, {args.strategy})")
    metrics: dict = {}
    if args.gold is not None:
        prf = mining_f1(result, read_gold(args.gold))
        print(f"precision {prf['precision']:.4f} recall {prf['recall']:.4f} F1 {prf['f1']:.4f}")
        metrics["f1"] = prf["f1"]
    return metrics


def _cmd_probe(args) -> dict:
    tr = EmbeddingMatrix.load(args.train_emb)
    te = EmbeddingMatrix.load(args.test_emb)
    y_tr = read_labels(args.train_labels)
    y_te = read_labels(args.test_labels)
    n_classes = max(max(y_tr), max(y_te)) + 1
    cfg = ProbeConfig(n_classes, tuple(args.hidden), args.epochs, args.lr, seed=args.seed)
    probe = train_probe(tr, y_tr, cfg)
    acc = eval_probe(probe, te, y_te)
    print(f"accuracy = {acc:.4f} (train {tr.lang}, test {te.lang}, {n_classes} classes)")
    return {"accuracy": acc}


_COMMANDS = {
    "gen-toy": _cmd_gen_toy,
    "build-vocab": _cmd_build_vocab,
    "train": _cmd_train,
    "embed": _cmd_embed,
    "retrieve": _cmd_retrieve,
    "mine": _cmd_mine,
    "probe": _cmd_probe,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    start = time.perf_counter()
    try:
        metrics = _COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, DegenerateError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, EmptyCorpusError, InvalidInputError, OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    if args.metrics_out is not None:
        out = {"task": args.command, **metrics}
        if args.record_time:
            out["wall_seconds"] = time.perf_counter() - start
        with open(args.metrics_out, "w", encoding="utf-8") as fh:
            json.dump(out, fh, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
