import pytest

from hagan.cli import run_cli
from hagan.corpus import read_roles

SMALL = ["--source-labeled", "30", "--source-test", "10", "--unlabeled", "20", "--target-test", "10"]
FAST = ["--embed-dim", "4", "--word-hidden", "4", "--sent-hidden", "3", "--disc-widths", "6",
        "--batch-size", "10"]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert run_cli(["gen-synth", "--seed", "7", "--out", str(out)] + SMALL) == 0
    return out


@pytest.fixture(scope="module")
def runs(corpus_dir, tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    for name, extra in (("han", ["--naive"]), ("hagan", [])):
        code = run_cli(["train", "--corpus", str(corpus_dir), "--out", str(base / name),
                        "--epochs", "1", "--seed", "1"] + FAST + extra)
        assert code == 0
    return base


def test_gen_synth_is_byte_identical(corpus_dir, tmp_path):
    assert run_cli(["gen-synth", "--seed", "7", "--out", str(tmp_path)] + SMALL) == 0
    for name in ("source.tsv", "target.tsv", "roles.tsv"):
        assert (tmp_path / name).read_bytes() == (corpus_dir / name).read_bytes()
    assert read_roles(tmp_path / "roles.tsv")


def test_train_zero_epochs(corpus_dir, tmp_path):
    assert run_cli(["train", "--corpus", str(corpus_dir), "--epochs", "0", "--out", str(tmp_path)] + FAST) == 0
    lines = (tmp_path / "train_log.tsv").read_text().splitlines()
    assert lines[0] == "epoch\tL_D\tL_G\tsrc_acc\ttgt_acc\tdomain_probe_acc"
    assert len(lines) == 2 and lines[1].startswith("0\t")
    assert (tmp_path / "checkpoint.txt").read_text().startswith("HAGAN-CKPT v1\n")


def test_eval(runs, corpus_dir, tmp_path):
    out = tmp_path / "acc.tsv"
    assert run_cli(["eval", "--run", str(runs / "hagan"), "--corpus", str(corpus_dir), "--out", str(out)]) == 0
    rows = dict(line.split("\t") for line in out.read_text().splitlines()[1:])
    assert set(rows) == {"source_test", "target_test"}
    assert all(0.0 <= float(v) <= 1.0 for v in rows.values())


def test_attention_and_pivots(runs, corpus_dir, tmp_path):
    for name, docs in (("han", "source"), ("hagan", "target")):
        assert run_cli(["extract-attention", "--run", str(runs / name), "--corpus", str(corpus_dir),
                        "--docs", docs]) == 0
        assert (runs / name / "attention.tsv").exists()
    out = tmp_path / "pivots.tsv"
    assert run_cli(["pivots", "--han", str(runs / "han"), "--hagan", str(runs / "hagan"),
                    "--high", "0.8", "--low", "0.2", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "word\tcategory\than_rank\thagan_rank"
    words = [line.split("\t")[0] for line in lines[1:]]
    assert len(words) == len(set(words))


def test_export_repr(runs, corpus_dir, tmp_path):
    out = tmp_path / "proj.tsv"
    args = ["export-repr", "--run", str(runs / "hagan"), "--corpus", str(corpus_dir), "--out", str(out)]
    assert run_cli(args) == 0
    first = out.read_bytes()
    assert run_cli(args) == 0
    assert out.read_bytes() == first
    lines = first.decode().splitlines()
    assert lines[0] == "doc_id\tx\ty\tdomain\tlabel"
    assert len(lines) == 1 + 40


def test_usage_errors_exit_2(capsys):
    assert run_cli(["frobnicate"]) == 2
    assert run_cli(["train", "--out", "x"]) == 2
    assert "usage" in capsys.readouterr().err


def test_data_errors_exit_1(tmp_path, capsys):
    (tmp_path / "source.tsv").write_text("1\tS\tok\n7\tS\tbad label\n")
    (tmp_path / "target.tsv").write_text("-\tT\tfine\n")
    assert run_cli(["train", "--corpus", str(tmp_path), "--out", str(tmp_path / "run")]) == 1
    assert "line 2" in capsys.readouterr().err
    assert run_cli(["eval", "--run", str(tmp_path / "missing"), "--corpus", str(tmp_path)]) == 1


def test_bad_thresholds_exit_1(runs):
    assert run_cli(["pivots", "--han", str(runs / "han"), "--hagan", str(runs / "hagan"),
                    "--high", "0.2", "--low", "0.8"]) == 1
