import json
import shutil
import subprocess
import sys

import numpy as np

from ugcanet import cli
from ugcanet.autodiff import REGISTRY, ops


def run(argv):
    """main() return code, treating argparse exits the same way."""
    try:
        return cli.main(argv)
    except SystemExit as e:
        return e.code


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run([]) == cli.EXIT_USAGE
    assert run(["train", "--bogus"]) == cli.EXIT_USAGE
    assert run(["train", "--lambda", "1,2,3"]) == cli.EXIT_USAGE
    assert run(["synth", "--size", "48", "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert run(["train", "--size", "40", "--manifest", str(tmp_path / "x.csv")]) == cli.EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_missing_inputs_exit_2(tmp_path, capsys):
    assert run(["train", "--manifest", str(tmp_path / "none.csv"), "--out", str(tmp_path / "r")]) == cli.EXIT_DATA
    assert run(["eval", "--checkpoint", str(tmp_path / "nope")]) == cli.EXIT_DATA
    bad = tmp_path / "bad.csv"
    bad.write_text("image,mask?\nmissing.ppm,\n")
    assert run(["train", "--manifest", str(bad), "--out", str(tmp_path / "r")]) == cli.EXIT_DATA
    assert "row 1" in capsys.readouterr().err


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ugcanet.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("gradcheck", "synth", "train", "eval", "experiment", "ablate"):
        assert name in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "ugcanet.cli", "train", "--steps", "x"], capture_output=True)
    assert proc.returncode == cli.EXIT_USAGE


def test_gradcheck_passes_and_covers_registry(capsys):
    assert run(["gradcheck", "--seed", "7"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    for name in REGISTRY:
        assert f"ok   {name} " in out, name
    assert "ok   UGCANet-tiny " in out
    assert f"{len(REGISTRY) + 1}/{len(REGISTRY) + 1} passed" in out


def test_gradcheck_catches_a_corrupted_backward(monkeypatch, capsys):
    real = ops.sigmoid

    def broken(x):
        out = real(x)
        node = out._node
        if node is not None:
            inner = node.backward
            node.backward = lambda g: [None if v is None else 2 * v for v in inner(g)]
        return out

    monkeypatch.setattr(ops, "sigmoid", broken)
    assert run(["gradcheck", "--seed", "7", "--coords", "20"]) == cli.EXIT_CHECK
    out = capsys.readouterr().out
    assert "FAIL sigmoid" in out and "failed:" in out


def _chain(root):
    data, runs = root / "data", root / "run"
    assert run(["synth", "--n", "8", "--size", "32", "--task-mix", "merged", "--out", str(data)]) == 0
    args = ["--size", "32", "--steps", "2", "--batch", "4", "--lr", "1e-3"]
    assert run(["train", "--manifest", str(data / "train.csv"), "--out", str(runs), *args]) == 0
    assert run(["eval", "--checkpoint", str(runs), "--manifest", str(data / "test.csv")]) == 0
    return data, runs


def test_synth_train_eval_chain_is_byte_deterministic(tmp_path):
    a_data, a_run = _chain(tmp_path / "a")
    b_data, b_run = _chain(tmp_path / "b")
    for rel in ("loss.csv", "metrics.csv", "eval/metrics.csv", "metrics.json"):
        assert (a_run / rel).read_bytes() == (b_run / rel).read_bytes(), rel
    assert (a_data / "train.csv").read_bytes() == (b_data / "train.csv").read_bytes()
    assert len((a_data / "train.csv").read_text().splitlines()) == 1 + 6
    metrics = json.loads((a_run / "metrics.json").read_text())
    assert {"mDice", "mIoU", "recall", "precision"} <= set(metrics)
    # eval reads the dumped masks back, so train-time and eval-time metrics agree
    assert (a_run / "metrics.csv").read_text().split("\n")[1].split(",")[3:7] == (
        (a_run / "eval" / "metrics.csv").read_text().split("\n")[1].split(",")[3:7]
    )
    assert len(list((a_run / "eval" / "predictions").glob("*.pgm"))) == 1


def test_eval_relative_paths_after_move(tmp_path):
    data, runs = _chain(tmp_path / "a")
    moved = tmp_path / "moved"
    shutil.copytree(data, moved)
    assert run(["eval", "--checkpoint", str(runs), "--manifest", str(moved / "test.csv"), "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "metrics.csv").read_bytes() == (runs / "eval" / "metrics.csv").read_bytes()


def test_ablate_and_experiment_outputs(tmp_path, capsys):
    args = ["--size", "32", "--steps", "1", "--batch", "4", "--n", "10"]
    assert run(["ablate", "--out", str(tmp_path / "ab"), *args]) == 0
    lines = (tmp_path / "ab" / "report.csv").read_text().splitlines()
    assert len(lines) == 5
    assert (tmp_path / "ab" / "report.txt").is_file() and (tmp_path / "ab" / "spec.json").is_file()
    assert run(["experiment", "--name", "cross-dataset", "--out", str(tmp_path / "cd"), "--dump", *args]) == 0
    assert list((tmp_path / "cd" / "predictions").rglob("*.pgm"))
    assert run(["experiment", "--name", "cross-dataset", "--test-manifest", "t.csv", *args]) == cli.EXIT_USAGE
    capsys.readouterr()


def test_lambda_parsing():
    assert cli._lambdas("1,0,0.5,2") == (1.0, 0.0, 0.5, 2.0)
    assert np.isclose(sum(cli._lambdas("0.25,0.25,0.25,0.25")), 1.0)
