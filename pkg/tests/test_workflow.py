from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from rdnn.base import Procedure, ProcedureConfig, create_procedure
from rdnn.data.load import read_checkpoint, read_pairs, read_trajectory
from rdnn.errors import ConfigurationError
from rdnn.evaluate import reproduce_table, rollout_learned, table_spec
from rdnn.network import NetworkConfig, NetworkParams
from rdnn.optimize import TrainConfig, train
from rdnn.residual import ResidualScheme
from rdnn.systems import generate_pairs, get_system

DEV_CONFIG = Path(__file__).with_name("dev.yaml")


class RecordingProcedure(Procedure):
    """Keeps every step's summary."""

    def __init__(self, procedure_config: ProcedureConfig):
        super().__init__(procedure_config)
        self.summaries = []

    def run(self):
        summary = super().run()
        self.summaries.append(summary)
        return summary


def _run(command, out, **overrides):
    proc = create_procedure(command, str(DEV_CONFIG), str(out), procedure_class=RecordingProcedure, **overrides)
    assert isinstance(proc, RecordingProcedure)
    return proc, proc.run()


def test_procedure_workflow(tmp_path):
    proc, generated = _run("gen-data", tmp_path)
    assert proc.config.source == str(DEV_CONFIG)
    data = read_pairs(generated["path"])
    assert len(data) == generated["n_pairs"] == 40
    assert data.metadata["system"] == "cubic_oscillator" and data.metadata["dt"] == 0.1

    _, trained = _run("train", tmp_path, data=generated["path"])
    assert np.isfinite(trained["final_loss"])
    model, payload = read_checkpoint(trained["checkpoint"])
    assert isinstance(model, NetworkParams) and model.widths == (2, 8, 2)
    assert payload["system"] == "cubic_oscillator"
    assert payload["data"] == Path(generated["path"]).name
    history = pd.read_csv(trained["history"])
    assert list(history["phase"])[0] == "init" and list(history["phase"])[-1] == "final"
    assert history["loss"].iloc[-1] <= history["loss"].iloc[0]

    _, predicted = _run("predict", tmp_path, checkpoint=trained["checkpoint"])
    (path,) = predicted["trajectories"]
    result = read_trajectory(path)
    assert result.times.size == 11
    assert result.true_states.shape == result.predicted_states.shape == (11, 2)
    assert predicted["metric_rel"][0] == pytest.approx(result.metric_rel)
    assert result.provenance["checkpoint"] == Path(trained["checkpoint"]).name

    # same configuration and seed, same bytes
    again = tmp_path / "again"
    _, regenerated = _run("gen-data", again)
    _, retrained = _run("train", again, data=regenerated["path"])
    assert Path(regenerated["path"]).read_bytes() == Path(generated["path"]).read_bytes()
    assert Path(retrained["checkpoint"]).read_text() == Path(trained["checkpoint"]).read_text()


def test_procedure_rejects_bad_configuration_before_work(tmp_path):
    with pytest.raises(ConfigurationError):
        create_procedure("train", str(DEV_CONFIG), str(tmp_path))
    with pytest.raises(ConfigurationError):
        create_procedure("gen-data", str(DEV_CONFIG), str(tmp_path), dt=-0.1)
    with pytest.raises(ConfigurationError):
        create_procedure("deploy", None, str(tmp_path))
    assert not any(tmp_path.iterdir())


def test_reproduce_configuration_reaches_the_table(tmp_path):
    cfg = tmp_path / "table.yaml"
    cfg.write_text(
        "model:\n  hidden: [16]\n"
        "training:\n  adam_steps: 7\n  adam_beta1: 0.8\n"
        "evaluation:\n  eval_step: 0.05\n"
        "reproduce:\n  table: 1\n  scale: smoke\n"
    )
    out = str(tmp_path / "out")
    spec = create_procedure("reproduce", str(cfg), out, seed=4).config.table_spec()
    assert spec.train_config.adam_steps == 7
    assert spec.train_config.lbfgs_max_iters == 200
    assert spec.train_config.adam_betas == (0.8, 0.999)
    assert spec.eval_step == 0.05 and spec.horizon == 25.0
    assert spec.net_config.hidden == (16,)
    assert spec.base_seed == 4 and spec.n_pairs == 500
    assert spec.cell_list() == [(0.2, 1), (0.2, 5)]

    grid = create_procedure("reproduce", str(cfg), out, dts=(0.05, 0.1), stages=2).config.table_spec()
    assert grid.cell_list() == [(0.05, 2), (0.1, 2)]

    with pytest.raises(ConfigurationError):
        create_procedure("reproduce", str(cfg), out, system="glycolytic")
    with pytest.raises(ConfigurationError):
        create_procedure("reproduce", str(cfg), out, eval_step=0.3)


def test_reproduce_with_exact_dynamics():
    for table_id in (1, 2, 3):
        spec = table_spec(table_id, "smoke", exact_rhs=True)
        df = reproduce_table(spec)
        assert list(df["M"]) == [1, 10 if table_id > 1 else 5]
        assert (df["metric_rel"] < 1e-6).all()


# -- benchmark reproductions ---------------------------------------------------------------


def _final_radius(model, ic, horizon, step):
    traj = rollout_learned(model, ic, horizon, step)
    assert not traj.diverged
    return float(np.hypot(*traj.states[-1, 1:3]))


@pytest.mark.slow
def test_recursive_stages_rescue_large_lag():
    df = reproduce_table(table_spec(1, cells=((0.2, 1), (0.2, 5))))
    m1 = df.loc[df["M"] == 1, "metric_rel"].item()
    m5 = df.loc[df["M"] == 5, "metric_rel"].item()
    assert m1 > 0.3
    assert m5 < 0.05
    assert m5 * 10 <= m1


@pytest.mark.slow
def test_small_lag_single_stage_is_accurate():
    df = reproduce_table(table_spec(1, cells=((0.01, 1),)))
    assert df["metric_rel"].item() < 0.05


@pytest.mark.slow
def test_hopf_bifurcation_is_recovered():
    system = get_system("hopf_augmented")
    data = generate_pairs(system, n_pairs=1000, dt=2.0, seed=0)
    params, history = train(ResidualScheme("recursive_rk4", 10), data, NetworkConfig(), TrainConfig(seed=0))
    assert history[-1].error is None

    for mu, x, y in system.eval_ics:
        radius = _final_radius(params, (mu, x, y), system.horizon, system.eval_step)
        if mu < 0:
            assert radius < 0.2, mu
        elif mu >= 0.3:
            assert radius == pytest.approx(np.sqrt(mu), rel=0.25), mu


@pytest.mark.slow
def test_glycolytic_error_improves_with_stages():
    df = reproduce_table(table_spec(2, cells=((0.2, 1), (0.2, 2), (0.2, 5), (0.2, 10))))
    errors = df.sort_values("M")["metric_rel"].to_numpy()
    assert np.all(np.diff(errors) < 0)
    assert errors[-1] < 0.1
