import json

import numpy as np
import pytest

from ems.cli import run
from ems.corpus import load_parallel_tsv
from ems.evalkit import EmbeddingMatrix, write_gold


def metrics(path):
    return json.loads(path.read_text())


def test_unknown_flag_is_usage_error(capsys):
    assert run(["retrieve", "--bogus"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_missing_subcommand_is_usage_error():
    assert run([]) == 1


def test_help_exits_zero(capsys):
    assert run(["train", "--help"]) == 0
    out = capsys.readouterr().out
    for flag in ("--ablate", "--config", "--resume", "--metrics-out"):
        assert flag in out


def test_bad_ablation_name_is_usage_error(tmp_path):
    assert run(["train", "--corpus", "x.tsv", "--out-dir", str(tmp_path), "--ablate", "no_everything"]) == 1


def test_missing_file_is_data_error(tmp_path):
    assert run(["build-vocab", "--corpus", str(tmp_path / "nope.tsv"), "--size", "50", "--out", str(tmp_path / "v")]) == 2


def test_malformed_corpus_is_data_error(tmp_path):
    (tmp_path / "bad.tsv").write_text("en\tde\tonly three fields\n")
    assert run(["build-vocab", "--corpus", str(tmp_path / "bad.tsv"), "--size", "50", "--out", str(tmp_path / "v")]) == 2


def test_unknown_config_key_is_usage_error(tmp_path):
    (tmp_path / "c.json").write_text('{"learning_rate": 1}')
    (tmp_path / "t.tsv").write_text("en\tde\ta b\tc d\n")
    code = run(["train", "--config", str(tmp_path / "c.json"), "--corpus", str(tmp_path / "t.tsv"),
                "--out-dir", str(tmp_path / "o")])
    assert code == 1


def test_degenerate_embeddings_are_numerical_failure(tmp_path):
    EmbeddingMatrix(np.zeros((2, 3)), ["0", "1"]).save(tmp_path / "z.emb")
    assert run(["retrieve", "--queries", str(tmp_path / "z.emb"), "--candidates", str(tmp_path / "z.emb")]) == 3


# -- gen-toy ------------------------------------------------------------------


def test_gen_toy_contract(tmp_path):
    for name in ("a", "b"):
        assert run(["gen-toy", "--langs", "3", "--pairs", "300", "--heldout", "50", "--seed", "7",
                    "--out-dir", str(tmp_path / name)]) == 0
    for split in ("train.tsv", "heldout.tsv"):
        assert (tmp_path / "a" / split).read_bytes() == (tmp_path / "b" / split).read_bytes()
    train = load_parallel_tsv(tmp_path / "a" / "train.tsv")
    held = load_parallel_tsv(tmp_path / "a" / "heldout.tsv")
    assert len(train) == 300 and len(held) == 50
    for p in list(train) + list(held):
        assert len(p.src_text.split()) == len(p.tgt_text.split())
        assert 3 <= len(p.src_text.split()) <= 12
        assert p.src_lang != p.tgt_lang
    assert {p.src_text for p in train}.isdisjoint(p.src_text for p in held)
    assert train.language_set == {"ta", "tb", "tc"}


def test_gen_toy_seed_changes_output(tmp_path):
    run(["gen-toy", "--pairs", "20", "--heldout", "5", "--seed", "1", "--out-dir", str(tmp_path / "a")])
    run(["gen-toy", "--pairs", "20", "--heldout", "5", "--seed", "2", "--out-dir", str(tmp_path / "b")])
    assert (tmp_path / "a" / "train.tsv").read_bytes() != (tmp_path / "b" / "train.tsv").read_bytes()


# -- evaluation wiring ---------------------------------------------------------


@pytest.fixture
def emb_files(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(20, 8))
    perm = rng.permutation(20)
    b = a[np.argsort(perm)] + 0.01 * rng.normal(size=a.shape)
    EmbeddingMatrix(a, [str(i) for i in range(20)], "ta").save(tmp_path / "a.emb")
    EmbeddingMatrix(b, [str(i) for i in range(20)], "tb").save(tmp_path / "b.emb")
    write_gold([(i, int(perm[i])) for i in range(20)], tmp_path / "gold.tsv")
    return tmp_path


def test_retrieve_with_gold(emb_files, capsys):
    d = emb_files
    code = run(["retrieve", "--queries", str(d / "a.emb"), "--candidates", str(d / "b.emb"),
                "--gold", str(d / "gold.tsv"), "--bidirectional", "--metrics-out", str(d / "m.json")])
    assert code == 0
    assert "P@1 = 1.0000" in capsys.readouterr().out
    assert metrics(d / "m.json") == {"task": "retrieve", "p_at_1": 1.0}


def test_retrieve_identity_gold_is_wrong_for_permuted_data(emb_files):
    d = emb_files
    run(["retrieve", "--queries", str(d / "a.emb"), "--candidates", str(d / "b.emb"),
         "--metrics-out", str(d / "m.json")])
    assert metrics(d / "m.json")["p_at_1"] < 0.5


def test_mine_writes_pairs_and_f1(emb_files):
    d = emb_files
    code = run(["mine", "--src", str(d / "a.emb"), "--tgt", str(d / "b.emb"), "--out", str(d / "mined.tsv"),
                "--gold", str(d / "gold.tsv"), "--metrics-out", str(d / "m.json")])
    assert code == 0
    assert metrics(d / "m.json") == {"task": "mine", "f1": 1.0}
    rows = [line.split("\t") for line in (d / "mined.tsv").read_text().splitlines()]
    assert len(rows) == 20


def test_probe_wiring(tmp_path):
    rng = np.random.default_rng(0)
    centres = rng.normal(scale=4.0, size=(3, 6))
    y = np.repeat(np.arange(3), 30)
    for name, seed in (("tr", 1), ("te", 2)):
        noise = np.random.default_rng(seed).normal(scale=0.5, size=(90, 6))
        EmbeddingMatrix(centres[y] + noise, [str(i) for i in range(90)]).save(tmp_path / f"{name}.emb")
        (tmp_path / f"{name}.lab").write_text("\n".join(map(str, y)) + "\n")
    args = ["probe", "--train-emb", str(tmp_path / "tr.emb"), "--train-labels", str(tmp_path / "tr.lab"),
            "--test-emb", str(tmp_path / "te.emb"), "--test-labels", str(tmp_path / "te.lab"),
            "--hidden", "16", "--epochs", "30", "--lr", "0.01", "--metrics-out", str(tmp_path / "m.json")]
    assert run(args) == 0
    m = metrics(tmp_path / "m.json")
    assert m["task"] == "probe" and m["accuracy"] >= 0.95


def test_record_time_is_opt_in(emb_files):
    d = emb_files
    base = ["retrieve", "--queries", str(d / "a.emb"), "--candidates", str(d / "a.emb")]
    run(base + ["--metrics-out", str(d / "plain.json")])
    run(base + ["--metrics-out", str(d / "timed.json"), "--record-time"])
    assert "wall_seconds" not in metrics(d / "plain.json")
    assert metrics(d / "timed.json")["wall_seconds"] >= 0


# -- train + embed --------------------------------------------------------------


def test_train_embed_pipeline(tmp_path):
    run(["gen-toy", "--pairs", "64", "--heldout", "16", "--vocab-per-lang", "20", "--seed", "3",
         "--out-dir", str(tmp_path / "data")])
    out = tmp_path / "run"
    code = run(["train", "--corpus", str(tmp_path / "data" / "train.tsv"), "--out-dir", str(out),
                "--n-layers", "1", "--n-heads", "2", "--d", "16", "--d-ff", "32", "--d-la", "8", "--d-cntrs", "8",
                "--batch-size", "8", "--max-steps", "12", "--warmup-steps", "2", "--vocab-size", "200",
                "--ablate", "no_lang_tok", "--metrics-out", str(tmp_path / "m.json")])
    assert code == 0
    assert metrics(tmp_path / "m.json") == {"task": "train", "steps": 12}
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["ablations"] == ["no_lang_tok"] and cfg["d"] == 16
    assert len((out / "curve.csv").read_text().splitlines()) == 13
    for side in ("src", "tgt"):
        assert run(["embed", "--checkpoint", str(out / "checkpoint.ckpt"), "--vocab", str(out / "vocab.txt"),
                    "--tsv", str(tmp_path / "data" / "heldout.tsv"), "--side", side,
                    "--out", str(tmp_path / f"{side}.emb")]) == 0
    e = EmbeddingMatrix.load(tmp_path / "src.emb")
    assert e.vectors.shape == (16, 16)
    assert run(["retrieve", "--queries", str(tmp_path / "src.emb"), "--candidates", str(tmp_path / "tgt.emb"),
                "--bidirectional"]) == 0
