import json
from pathlib import Path

import pandas as pd
import pytest

from rdnn.__main__ import main
from rdnn.data.load import read_pairs
from rdnn.data.writer import write_pairs
from rdnn.systems import generate_pairs, get_system


@pytest.fixture
def run(tmp_path):
    """Invoke the CLI with a private log directory; returns the exit code."""

    def _run(*args, out=None):
        argv = [*args, "--log-dir", str(tmp_path / "logs")]
        if out is not None:
            argv += ["--out", str(out)]
        return main(argv)

    return _run


@pytest.fixture
def exact_checkpoint(tmp_path):
    path = tmp_path / "exact_checkpoint.json"
    path.write_text(json.dumps({"format": "rdnn-checkpoint", "version": 1, "kind": "exact",
                                "system": "cubic_oscillator"}))
    return path


@pytest.fixture
def toy_pairs(tmp_path):
    data = generate_pairs(get_system("cubic_oscillator"), n_pairs=10, dt=0.1, seed=0)
    path, _ = write_pairs(data, tmp_path / "toy_pairs.csv")
    return path


def test_gen_data_writes_deterministic_files(run, tmp_path, capsys):
    args = ("gen-data", "--system", "cubic_oscillator", "--n-pairs", "1000", "--dt", "0.2", "--seed", "7")
    assert run(*args, out=tmp_path / "a") == 0
    assert run(*args, out=tmp_path / "b") == 0

    name = "cubic_oscillator_dt0p2_n1000_seed7_pairs.csv"
    first, second = tmp_path / "a" / name, tmp_path / "b" / name
    assert len(read_pairs(first)) == 1000
    assert first.read_bytes() == second.read_bytes()
    assert first.with_suffix(".json").read_bytes() == second.with_suffix(".json").read_bytes()
    assert "n_pairs=1000" in capsys.readouterr().out


def test_gen_data_unknown_system_is_a_usage_error(run, tmp_path, capsys):
    assert run("gen-data", "--system", "lorenz", "--dt", "0.1", out=tmp_path) == 1
    assert capsys.readouterr().err.startswith("rdnn: error[UsageError]")


def test_gen_data_needs_a_lag(run, tmp_path, capsys):
    assert run("gen-data", "--system", "cubic_oscillator", out=tmp_path) == 1
    assert "error[ConfigurationError]" in capsys.readouterr().err


def test_config_file_values_lose_to_flags(run, tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("data:\n  system: hopf_augmented\n  n_pairs: 5\n  dt: 0.5\ntraining:\n  seed: 3\n")
    assert run("gen-data", "--config", str(cfg), "--n-pairs", "7", out=tmp_path) == 0
    data = read_pairs(tmp_path / "hopf_augmented_dt0p5_n7_seed3_pairs.csv")
    assert len(data) == 7 and data.dim == 3


def test_config_file_with_unknown_key(run, tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"dt": 0.1, "learning_rate": 3}))
    assert run("gen-data", "--config", str(cfg), out=tmp_path) == 1
    assert "learning_rate" in capsys.readouterr().err


def test_train_on_toy_set(run, tmp_path, toy_pairs, capsys):
    code = run("train", "--data", str(toy_pairs), "--stages", "2", "--hidden", "8", "--adam-steps", "50",
               "--lbfgs-max-iters", "0", out=tmp_path / "runs")
    assert code == 0
    checkpoint = tmp_path / "runs" / "cubic_oscillator_recursive_rk4_M2_dt0p1_checkpoint.json"
    payload = json.loads(checkpoint.read_text())
    assert payload["widths"] == [2, 8, 2]
    assert payload["scheme"] == {"kind": "recursive_rk4", "stages": 2}
    history = pd.read_csv(checkpoint.with_name("cubic_oscillator_recursive_rk4_M2_dt0p1_history.csv"))
    assert history["loss"].notna().all()
    out = capsys.readouterr().out
    assert "final_loss=" in out and str(checkpoint) in out


def test_train_missing_dataset(run, tmp_path, capsys):
    out = tmp_path / "runs"
    assert run("train", "--data", str(tmp_path / "nope.csv"), out=out) == 3
    assert "nope.csv" in capsys.readouterr().err
    assert not out.exists() or not any(out.iterdir())


def test_train_rejects_zero_stages(run, tmp_path, toy_pairs):
    assert run("train", "--data", str(toy_pairs), "--stages", "0", out=tmp_path / "runs") == 1
    assert not (tmp_path / "runs").exists()


def test_train_on_malformed_csv(run, tmp_path, capsys):
    bad = tmp_path / "bad_pairs.csv"
    bad.write_text("# dim=1\nt1,phi1_1,t2,phi2_1\n0,1.0,0.1,1.1\n0,abc,0.1,1.2\n")
    assert run("train", "--data", str(bad), out=tmp_path) == 3
    err = capsys.readouterr().err
    assert "error[DataFormatError]" in err and "row 2" in err


def test_predict_with_exact_checkpoint(run, tmp_path, exact_checkpoint, capsys):
    code = run("predict", "--checkpoint", str(exact_checkpoint), "--truth", "cubic_oscillator",
               "--ic", "2,0", out=tmp_path)
    assert code == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    metric, path = line.split()
    assert metric.startswith("relative_l2_error=")
    assert float(metric.split("=")[1]) < 1e-6
    assert Path(path).name == "cubic_oscillator_trajectory_0.csv"
    assert list(pd.read_csv(path).columns) == ["t", "true_1", "true_2", "pred_1", "pred_2"]


def test_predict_ic_dimension_mismatch(run, tmp_path, exact_checkpoint, capsys):
    code = run("predict", "--checkpoint", str(exact_checkpoint), "--ic", "2,0,1", "--horizon", "1",
               "--eval-step", "0.1", out=tmp_path)
    assert code == 2
    assert "error[ContractError]" in capsys.readouterr().err


def test_predict_without_truth(run, tmp_path, exact_checkpoint, capsys):
    code = run("predict", "--checkpoint", str(exact_checkpoint), "--ic", "2,0", "--horizon", "1",
               "--eval-step", "0.1", out=tmp_path)
    assert code == 0
    out = capsys.readouterr().out
    assert "relative_l2_error" not in out
    df = pd.read_csv(out.strip())
    assert list(df.columns) == ["t", "pred_1", "pred_2"] and len(df) == 11

    assert run("predict", "--checkpoint", str(exact_checkpoint), "--ic", "2,0", out=tmp_path) == 1


def test_predict_rejects_foreign_checkpoint(run, tmp_path, capsys):
    bogus = tmp_path / "bogus.json"
    bogus.write_text(json.dumps({"weights": []}))
    assert run("predict", "--checkpoint", str(bogus), "--truth", "cubic_oscillator", out=tmp_path) == 3


def test_reproduce_unknown_table(run, tmp_path, capsys):
    assert run("reproduce", "--table", "9", out=tmp_path) == 1
    assert "UsageError" in capsys.readouterr().err


TABLE_HEADER = ["system", "scheme", "dt", "M", "seed", "metric_rel", "metric_abs", "final_loss", "wall_seconds",
                "status"]


def test_reproduce_smoke_table_with_short_training(run, tmp_path, capsys):
    cfg = tmp_path / "short.yaml"
    cfg.write_text("data:\n  n_pairs: 40\nmodel:\n  hidden: [8]\ntraining:\n  adam_steps: 20\n  lbfgs_max_iters: 5\n")
    assert run("reproduce", "--config", str(cfg), "--table", "1", "--scale", "smoke", out=tmp_path / "out") == 0

    out = capsys.readouterr().out
    assert "dt=0.2" in out and "M=1" in out and "M=5" in out
    table = tmp_path / "out" / "cubic_oscillator_table1_smoke.csv"
    assert out.strip().splitlines()[-1] == str(table)
    df = pd.read_csv(table)
    assert list(df.columns) == TABLE_HEADER
    assert list(df["M"]) == [1, 5] and (df["dt"] == 0.2).all()
    assert df["status"].isin(["ok", "training_diverged"]).all()
    assert table.with_suffix(".txt").is_file()


@pytest.mark.slow
def test_reproduce_smoke_table(run, tmp_path, capsys):
    assert run("reproduce", "--table", "1", "--scale", "smoke", out=tmp_path) == 0
    df = pd.read_csv(tmp_path / "cubic_oscillator_table1_smoke.csv")
    assert list(df.columns) == TABLE_HEADER
    assert list(df["M"]) == [1, 5]
    assert df["metric_rel"].notna().all()


def test_version(capsys):
    assert main(["--version"]) == 0
    assert "rdnn" in capsys.readouterr().out
