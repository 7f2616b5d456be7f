import json

import pytest

from textgraph.cli import main
from textgraph.hlt import HierLabelTree
from textgraph.sparse import read_sparse

CONFIG = """\
synth_n = 40
synth_num_classes = 2
synth_p_in = 0.3
synth_p_out = 0.02
synth_vocab_per_class = 6
synth_shared_vocab = 10
synth_text_len = 6
split_train = 0.5
split_valid = 0.25
split_test = 0.25
embed_dim = 8
hidden_dim = 6
depth = 2
epochs_per_round = 2
extra_max_epochs = 5
lr_max = 0.01
kinds = multitask, text_only
seeds = 0, 1
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text(CONFIG)
    return str(p)


def test_gen_featurize_build_hlt(tmp_path, cfg, capsys):
    data = tmp_path / "data"
    assert main(["gen-synth", "--config", cfg, "--out-dir", str(data)]) == 0
    assert len((data / "nodes.tsv").read_text().splitlines()) == 40
    feats = tmp_path / "feats"
    assert main(["featurize", "--nodes", str(data / "nodes.tsv"), "--out-dir", str(feats)]) == 0
    x = read_sparse(feats / "features.txt")
    assert x.shape[0] == 40
    assert main(["build-hlt", "--config", cfg, "--features", str(feats / "features.txt"), "--out-dir", str(feats)]) == 0
    tree = HierLabelTree.load(feats / "hlt.txt")
    assert tree.depth == 2 and tree.n == 40


def test_train_then_eval(tmp_path, cfg, capsys):
    run = tmp_path / "run"
    assert main(["train", "--config", cfg, "--seed", "3", "--delay-rounds", "1", "--extra-round", "--out-dir", str(run)]) == 0
    trained = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert trained["kind"] == "multitask" and trained["seed"] == 3
    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--vocab", str(run / "vocab.txt"),
                 "--nodes", str(run / "nodes.tsv"), "--edges", str(run / "edges.tsv")]) == 0
    evaluated = json.loads(capsys.readouterr().out.strip())
    assert evaluated == {k: trained[k] for k in ("train", "valid", "test")}


def test_run_compare_explain(tmp_path, cfg, capsys):
    out = tmp_path / "res"
    assert main(["run", "--config", cfg, "--out-dir", str(out)]) == 0
    assert (out / "results.csv").exists()
    capsys.readouterr()
    assert main(["compare", "--results", str(out / "results.csv"), "--a", "multitask", "--b", "text_only"]) == 0
    text = capsys.readouterr().out
    assert "| multitask |" in text and "median_delta_points" in text
    assert main(["explain", "--run-dir", str(out), "--a", "multitask", "--b", "text_only"]) == 0
    report = json.loads((out / "explain_multitask_vs_text_only.json").read_text())
    assert set(report) == {"a_over_b", "b_over_a", "both_wrong", "samples"}


def test_inductive_flag(tmp_path, cfg, capsys):
    assert main(["train", "--config", cfg, "--mode", "inductive", "--kind", "text_only", "--out-dir", str(tmp_path)]) == 0


def test_bad_config_key_exits_nonzero(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("no_such_key = 1\n")
    assert main(["run", "--config", str(p), "--out-dir", str(tmp_path)]) == 2
    assert "no_such_key" in capsys.readouterr().err


def test_missing_file_exits_nonzero(tmp_path, capsys):
    assert main(["featurize", "--nodes", str(tmp_path / "absent.tsv"), "--out-dir", str(tmp_path)]) == 2


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["bogus"])
