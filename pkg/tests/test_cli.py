import csv
import json

import numpy as np
import pytest

from tubalnet.cli import build_parser, main
from tubalnet.dataio import read_mask, read_tensor, write_mask, write_tensor
from tubalnet.training import TrainConfig

FAST = ["--epochs", "30", "--depth", "2", "--latent-dim", "4"]


def test_help_shows_defaults(capsys):
    with pytest.raises(SystemExit) as info:
        main(["synth", "--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    assert f"default: {TrainConfig().epochs}" in out
    assert "30, 30, 10" in out


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_synth_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["synth", "--dims", "6,7,3", "--rank", "2", "--out", str(out), *FAST]) == 0
    assert "test RMSE" in capsys.readouterr().out
    for name in ("truth.t3b", "mask.t3m", "completed.t3b", "report.csv", "report.json", "manifest.json", "summary.csv"):
        assert (out / name).exists(), name
    truth, mask, completed = read_tensor(out / "truth.t3b"), read_mask(out / "mask.t3m"), read_tensor(out / "completed.t3b")
    np.testing.assert_array_equal(completed[mask], truth[mask])
    with open(out / "summary.csv") as fh:
        row = next(csv.DictReader(fh))
    assert row["dims"] == "6x7x3" and float(row["ratio"]) > 0
    rows = (out / "report.csv").read_text().splitlines()
    assert rows[0] == "epoch,train_loss,val_rmse,test_rmse"
    assert rows[-1].startswith("final,")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["config"]["epochs"] == 30


def test_synth_deterministic(tmp_path):
    args = ["synth", "--dims", "5,5,2", "--rank", "2", *FAST]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    for name in ("completed.t3b", "report.csv", "report.json", "summary.csv", "mask.t3m"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_synth_zero_missing(tmp_path, capsys):
    assert main(["synth", "--dims", "4,4,2", "--rank", "1", "--missing-rate", "0", "--out", str(tmp_path), *FAST]) == 0
    assert "test set empty" in capsys.readouterr().out


def test_complete_with_mask_and_eval(tmp_path, capsys):
    rng = np.random.default_rng(0)
    truth = rng.random((5, 6, 2))
    mask = rng.random(truth.shape) < 0.6
    write_tensor(np.where(mask, truth, 0.0), tmp_path / "in.t3b")
    write_tensor(truth, tmp_path / "truth.t3b")
    write_mask(mask, tmp_path / "mask.t3m")
    code = main(["complete", "--input", str(tmp_path / "in.t3b"), "--mask", str(tmp_path / "mask.t3m"),
                 "--truth", str(tmp_path / "truth.t3b"), "--out", str(tmp_path / "o"), "--series", "0", *FAST])
    assert code == 0
    reported = float(capsys.readouterr().out.split("test RMSE: ")[1].split()[0])
    assert (tmp_path / "o" / "series.csv").exists()
    assert main(["eval", "--truth", str(tmp_path / "truth.t3b"), "--estimate", str(tmp_path / "o" / "completed.t3b"),
                 "--mask", str(tmp_path / "mask.t3m")]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(reported, abs=1e-6)


def test_complete_missing_rate(tmp_path):
    write_tensor(np.random.default_rng(1).random((4, 5, 2)), tmp_path / "in.t3b")
    assert main(["complete", "--input", str(tmp_path / "in.t3b"), "--missing-rate", "0.3",
                 "--out", str(tmp_path / "o"), *FAST]) == 0
    assert read_mask(tmp_path / "o" / "mask.t3m").sum() == 28


def test_eval_exact(tmp_path, capsys):
    t = np.ones((2, 2, 2))
    write_tensor(t, tmp_path / "t.t3b")
    write_mask(np.eye(2, dtype=bool)[:, :, None].repeat(2, 2), tmp_path / "m.t3m")
    assert main(["eval", "--truth", str(tmp_path / "t.t3b"), "--estimate", str(tmp_path / "t.t3b"),
                 "--mask", str(tmp_path / "m.t3m")]) == 0
    assert capsys.readouterr().out.strip() == "0.000000"


def test_input_errors(tmp_path, capsys):
    write_tensor(np.ones((2, 2, 2)), tmp_path / "t.t3b")
    write_mask(np.ones((2, 3, 2), bool), tmp_path / "m.t3m")
    assert main(["complete", "--input", str(tmp_path / "t.t3b"), "--mask", str(tmp_path / "m.t3m"),
                 "--out", str(tmp_path / "o")]) == 2
    assert "shape" in capsys.readouterr().err
    assert main(["complete", "--input", str(tmp_path / "missing.t3b"), "--missing-rate", "0.5",
                 "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "bad.t3b").write_bytes(b"XXXX")
    assert main(["eval", "--truth", str(tmp_path / "bad.t3b"), "--estimate", str(tmp_path / "t.t3b"),
                 "--mask", str(tmp_path / "m.t3m")]) == 2
    assert main(["synth", "--out", str(tmp_path / "s"), "--epochs", "0"]) == 2


def test_divergence_exit_code(tmp_path, capsys):
    code = main(["synth", "--dims", "5,5,2", "--rank", "2", "--out", str(tmp_path), "--optimizer", "sgd",
                 "--lr", "1e6", "--activation", "relu", "--validation-fraction", "0", "--epochs", "200"])
    assert code == 3
    assert "--lr" in capsys.readouterr().err


class TestGradcheck:
    def test_default_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "block,entries,max_abs_err,max_rel_err,passed"
        assert all(line.endswith(",1") for line in lines[1:])

    def test_corrupt_fails(self, capsys):
        assert main(["gradcheck", "--corrupt", "w_u[0]"]) == 1
        assert "w_u[0]" in capsys.readouterr().err

    def test_epsilon_warning(self, capsys):
        main(["gradcheck", "--epsilon", "1e-1", "--dims", "3,3,2", "--depth", "2"])
        assert "warning" in capsys.readouterr().err

    def test_dims_limit(self):
        assert main(["gradcheck", "--dims", "9,2,2"]) == 2

    def test_writes_csv(self, tmp_path, capsys):
        assert main(["gradcheck", "--dims", "3,3,2", "--depth", "2", "--pooling", "tube-wise", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "gradcheck.csv").read_text() == capsys.readouterr().out
