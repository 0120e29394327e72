"""
Rollout of learned models, trajectory error metrics, and the benchmark tables.

A table is a grid of ``(dt, M)`` cells. For each cell a model is trained on
pairs with time lag ``dt`` using the recursive scheme with ``M`` stages, then
rolled out from the evaluation initial conditions and compared with the true
system. Datasets are generated once per ``dt`` and shared across the ``M``
columns of that row.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from functools import partial
from itertools import product
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from rdnn.errors import ConfigurationError, ContractError, DivergenceError, EvaluationError, RDNNError
from rdnn.network import NetworkConfig, NetworkParams, forward
from rdnn.optimize import TrainConfig, loss, train
from rdnn.protocols import RightHandSide
from rdnn.residual import ResidualScheme, SchemeKind
from rdnn.systems import (
    DataPairSet,
    Domain,
    ExactModel,
    TrueSystem,
    derive_seed,
    generate_pairs,
    get_system,
    rk4_step,
)
from rdnn.utils._logger import get_logger

logger = get_logger(__name__)

Model = Union[NetworkParams, ExactModel, RightHandSide]

TABLE_COLUMNS = (
    "system", "scheme", "dt", "M", "seed", "metric_rel", "metric_abs", "final_loss", "wall_seconds", "status",
)
DEFAULT_TRUTH_SUBSTEPS = 1


# ---------------------------------------------------------------- trajectories


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    diverged: bool = False
    failure_time: Optional[float] = None

    def __len__(self) -> int:
        return self.times.size


@dataclass(eq=False)
class TrajectoryResult:
    """Predicted trajectory, optionally with the true one and their errors."""

    times: np.ndarray
    predicted_states: np.ndarray
    true_states: Optional[np.ndarray] = None
    metric_rel: Optional[float] = None
    metric_abs: Optional[float] = None
    diverged: bool = False
    failure_time: Optional[float] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.true_states is not None and self.true_states.shape[0] != self.times.size:
            raise ContractError(f"{self.times.size} grid points but {self.true_states.shape[0]} true states")
        if self.predicted_states.shape[0] > self.times.size:
            raise ContractError("more predicted states than grid points")
        if not self.diverged and self.predicted_states.shape[0] != self.times.size:
            raise ContractError("a complete prediction needs one state per grid point")

    @property
    def dim(self) -> int:
        return self.predicted_states.shape[1]


def time_grid(horizon: float, eval_step: float) -> np.ndarray:
    """``0, eval_step, ..., horizon``; the horizon must be a whole number of steps."""
    if not (eval_step > 0 and horizon > 0):
        raise ContractError(f"need horizon > 0 and eval_step > 0, got {horizon} and {eval_step}")
    n = int(round(horizon / eval_step))
    if n < 1 or abs(n * eval_step - horizon) > 1e-9 * horizon:
        raise ContractError(f"horizon {horizon} is not a whole number of steps of {eval_step}")
    return np.arange(n + 1) * eval_step


def _as_rhs(model: Model) -> RightHandSide:
    if isinstance(model, NetworkParams):
        return partial(forward, model)
    return model


def _state_dim(model: Model) -> Optional[int]:
    return getattr(model, "state_dim", None)


def rollout_learned(model: Model, phi0: Any, horizon: float, eval_step: float) -> Trajectory:
    """Integrate ``phi' = model(phi, t)`` with RK4 on the evaluation grid.

    On a non-finite state the trajectory is cut at the last finite grid point
    and flagged with the time of failure.
    """
    times = time_grid(horizon, eval_step)
    phi = np.atleast_1d(np.asarray(phi0, dtype=np.float64))
    d = _state_dim(model)
    if phi.ndim != 1 or (d is not None and phi.size != d):
        raise ContractError(f"initial condition of shape {phi.shape} does not match state dimension {d}")
    F = _as_rhs(model)

    states = np.empty((times.size, phi.size))
    states[0] = phi
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(times.size - 1):
            nxt = rk4_step(F, phi, times[k], eval_step)
            if not np.all(np.isfinite(nxt)):
                logger.warning(f"Rollout diverged at t={times[k + 1]:g}")
                return Trajectory(times, states[:k + 1].copy(), True, float(times[k + 1]))
            states[k + 1] = phi = nxt
    return Trajectory(times, states)


def truth_trajectory(
    system: TrueSystem,
    phi0: Any,
    horizon: float,
    eval_step: float,
    substeps: int = DEFAULT_TRUTH_SUBSTEPS,
) -> Trajectory:
    """Reference solution on the evaluation grid, ``substeps`` RK4 steps per interval.

    With one substep the step sequence is exactly the one :func:`rollout_learned`
    takes, so the true RHS in place of a model reproduces this trajectory bit
    for bit.
    """
    if int(substeps) != substeps or substeps < 1:
        raise ContractError(f"substeps must be a positive integer, got {substeps}")
    times = time_grid(horizon, eval_step)
    phi = np.atleast_1d(np.asarray(phi0, dtype=np.float64))
    if phi.size != system.dim:
        raise ContractError(f"initial condition has {phi.size} components, {system.name} has {system.dim}")
    substeps = int(substeps)
    h = eval_step / substeps
    states = np.empty((times.size, phi.size))
    states[0] = phi
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(times.size - 1):
            for i in range(substeps):
                phi = rk4_step(system.rhs, phi, times[k] + i * h, h)
            if not np.all(np.isfinite(phi)):
                raise DivergenceError(f"{system.name} reference trajectory is non-finite", time=float(times[k + 1]))
            states[k + 1] = phi
    return Trajectory(times, states)


def _stacked(a: Any) -> np.ndarray:
    if isinstance(a, Trajectory):
        return a.states
    return np.atleast_2d(np.asarray(a, dtype=np.float64))


def _difference(pred: Any, truth: Any) -> tuple[np.ndarray, np.ndarray]:
    p, q = _stacked(pred), _stacked(truth)
    if p.shape != q.shape:
        raise ContractError(f"trajectories differ in shape: {p.shape} and {q.shape}")
    return p - q, q


def relative_l2_error(pred: Any, truth: Any) -> float:
    """Frobenius norm of ``pred - truth`` over the whole grid, relative to ``truth``."""
    diff, q = _difference(pred, truth)
    denom = np.linalg.norm(q)
    if denom == 0:
        raise EvaluationError("relative error undefined for an all-zero reference trajectory")
    return float(np.linalg.norm(diff) / denom)


def absolute_l2_error(pred: Any, truth: Any) -> float:
    """Frobenius norm of ``pred - truth`` divided by sqrt(number of grid points)."""
    diff, _ = _difference(pred, truth)
    return float(np.linalg.norm(diff) / np.sqrt(diff.shape[0]))


def evaluate_model(
    model: Model,
    phi0: Any,
    horizon: float,
    eval_step: float,
    *,
    system: Optional[TrueSystem] = None,
    truth_substeps: int = DEFAULT_TRUTH_SUBSTEPS,
    truth: Optional[Trajectory] = None,
) -> TrajectoryResult:
    pred = rollout_learned(model, phi0, horizon, eval_step)
    if truth is None and system is not None:
        truth = truth_trajectory(system, phi0, horizon, eval_step, truth_substeps)
    provenance = {
        "initial_condition": [float(x) for x in np.atleast_1d(phi0)],
        "horizon": float(horizon),
        "eval_step": float(eval_step),
        "integrator": "rk4",
        "system": system.name if system is not None else None,
        "truth_substeps": int(truth_substeps) if truth is not None else None,
    }
    result = TrajectoryResult(pred.times, pred.states, None, None, None, pred.diverged, pred.failure_time,
                              provenance)
    if truth is None:
        return result
    result.true_states = truth.states
    if pred.diverged:
        result.metric_rel = result.metric_abs = float("inf")
    else:
        result.metric_rel = relative_l2_error(pred, truth)
        result.metric_abs = absolute_l2_error(pred, truth)
    return result


def export_trajectory(result: TrajectoryResult, path: Union[str, Path]) -> tuple[Path, Path]:
    """Write the trajectory CSV and its JSON sidecar; returns both paths."""
    from rdnn.data.writer import write_trajectory

    return write_trajectory(result, path)


# ---------------------------------------------------------------- tables


@dataclass(frozen=True)
class TableSpec:
    system: str
    dts: tuple[float, ...]
    stages: tuple[int, ...]
    eval_ics: tuple[tuple[float, ...], ...]
    horizon: float
    eval_step: float
    scheme_kind: SchemeKind = SchemeKind.RECURSIVE_RK4
    n_pairs: int = 1000
    net_config: NetworkConfig = NetworkConfig()
    train_config: TrainConfig = TrainConfig()
    seeds_per_cell: int = 1
    base_seed: int = 0
    truth_substeps: int = DEFAULT_TRUTH_SUBSTEPS
    data_substeps: Optional[int] = None
    domain: Optional[Domain] = None
    exact_rhs: bool = False
    cells: Optional[tuple[tuple[float, int], ...]] = None
    reference: dict = field(default_factory=dict)
    table_id: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.dts:
            raise ConfigurationError("table needs at least one time lag")
        if not self.stages:
            raise ConfigurationError("table needs at least one stage count")
        if not self.eval_ics:
            raise ConfigurationError("table needs at least one evaluation initial condition")
        for M in self.stages:
            ResidualScheme(self.scheme_kind, M)
        object.__setattr__(self, "scheme_kind", SchemeKind(self.scheme_kind))
        if self.seeds_per_cell < 1:
            raise ConfigurationError(f"seeds_per_cell must be >= 1, got {self.seeds_per_cell}")
        if self.n_pairs < 1:
            raise ConfigurationError(f"n_pairs must be >= 1, got {self.n_pairs}")
        time_grid(self.horizon, self.eval_step)
        if self.cells is not None:
            grid = set(product(self.dts, self.stages))
            stray = [c for c in self.cells if tuple(c) not in grid]
            if stray or not self.cells:
                raise ConfigurationError(f"cells {stray} are not in the dt x M grid")

    def cell_list(self) -> list[tuple[float, int]]:
        if self.cells is not None:
            return [(float(dt), int(M)) for dt, M in self.cells]
        return [(float(dt), int(M)) for dt, M in product(self.dts, self.stages)]


def _stack_metrics(results: Sequence[TrajectoryResult]) -> tuple[float, float]:
    if any(r.diverged for r in results):
        return float("inf"), float("inf")
    pred = np.vstack([r.predicted_states for r in results])
    truth = np.vstack([r.true_states for r in results])
    return relative_l2_error(pred, truth), absolute_l2_error(pred, truth)


def _run_cell(
    spec: TableSpec,
    system: TrueSystem,
    dt: float,
    M: int,
    replicate: int,
    data: DataPairSet,
    truths: Sequence[Trajectory],
) -> dict:
    started = time.perf_counter()
    scheme = ResidualScheme(spec.scheme_kind, M)
    seed = derive_seed(spec.base_seed, system.name, "train", dt, M, replicate)
    row = {"system": system.name, "scheme": scheme.kind.value, "dt": dt, "M": M, "seed": seed,
           "metric_rel": float("nan"), "metric_abs": float("nan"), "final_loss": float("nan"), "status": "ok"}
    try:
        if spec.exact_rhs:
            model: Model = ExactModel(system.name)
        else:
            model, history = train(scheme, data, spec.net_config, replace(spec.train_config, seed=seed))
            row["final_loss"] = history[-1].loss
            if history[-1].error:
                row["status"] = "training_diverged"
                row["final_loss"] = loss(model, scheme, data, penalty=spec.train_config.divergence_penalty)
        results = [
            evaluate_model(model, ic, spec.horizon, spec.eval_step, truth=truth)
            for ic, truth in zip(spec.eval_ics, truths)
        ]
        row["metric_rel"], row["metric_abs"] = _stack_metrics(results)
        if any(r.diverged for r in results):
            row["status"] = "diverged"
    except (RDNNError, ArithmeticError) as err:
        logger.error(f"{system.name} dt={dt} M={M}: {type(err).__name__}: {err}")
        row["status"] = "failed"
    row["wall_seconds"] = time.perf_counter() - started
    logger.info(f"{system.name} dt={dt:g} M={M} seed={seed}: {row['status']}, rel={row['metric_rel']:.4g}")
    return row


def reproduce_table(spec: TableSpec, *, workers: int = 1, progress: bool = False) -> pd.DataFrame:
    """Train and evaluate every cell of ``spec``; one row per (cell, seed replicate).

    Rows come back in cell order regardless of ``workers``. Failing cells are
    recorded with status ``failed`` and do not stop the run.
    """
    system = get_system(spec.system)
    cells = spec.cell_list()
    for ic in spec.eval_ics:
        if len(ic) != system.dim:
            raise ConfigurationError(f"evaluation IC {ic} does not match {system.name} (d={system.dim})")

    truths = [truth_trajectory(system, ic, spec.horizon, spec.eval_step, spec.truth_substeps) for ic in spec.eval_ics]
    datasets: dict[tuple[float, int], DataPairSet] = {}
    for dt in dict.fromkeys(dt for dt, _ in cells):
        for rep in range(spec.seeds_per_cell):
            if spec.exact_rhs:
                datasets[(dt, rep)] = DataPairSet.empty()
                continue
            data_seed = derive_seed(spec.base_seed, system.name, "data", dt, rep)
            datasets[(dt, rep)] = generate_pairs(system, spec.domain, spec.n_pairs, dt, data_seed,
                                                 spec.data_substeps)

    jobs = [(dt, M, rep) for dt, M in cells for rep in range(spec.seeds_per_cell)]
    rows: list[Optional[dict]] = [None] * len(jobs)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        futures = {
            executor.submit(_run_cell, spec, system, dt, M, rep, datasets[(dt, rep)], truths): i
            for i, (dt, M, rep) in enumerate(jobs)
        }
        for future in tqdm(as_completed(futures), total=len(futures), desc=f"{system.name} cells",
                           disable=not progress, leave=False):
            rows[futures[future]] = future.result()
    return pd.DataFrame(rows, columns=list(TABLE_COLUMNS))


def _cell_text(values: pd.Series, statuses: pd.Series) -> str:
    ok = values[np.isfinite(values)]
    if ok.empty:
        return "failed" if (statuses == "failed").all() else "diverged"
    if len(values) == 1:
        return f"{ok.iloc[0]:.4g}"
    return f"{ok.mean():.4g} ± {ok.std(ddof=0):.2g}"


def format_table(df: pd.DataFrame, reference: Optional[dict] = None) -> str:
    """Human-readable dt x M grid of the relative error.

    With ``reference`` (``{(dt, M): value}``) each cell also shows the
    published value in brackets.
    """
    if df.empty:
        return "(no cells)"
    reference = reference or {}
    grid: dict[float, dict[int, str]] = {}
    for (dt, M), cell in df.groupby(["dt", "M"], sort=True):
        text = _cell_text(cell["metric_rel"].astype(float), cell["status"])
        ref = reference.get((float(dt), int(M)))
        if ref is not None:
            text = f"{text} [{ref:g}]"
        grid.setdefault(float(dt), {})[int(M)] = text
    table = pd.DataFrame.from_dict(grid, orient="index").sort_index()
    table = table.reindex(columns=sorted(table.columns))
    table.index = [f"dt={dt:g}" for dt in table.index]
    table.columns = [f"M={M}" for M in table.columns]
    system = df["system"].iloc[0]
    return f"{system} ({df['scheme'].iloc[0]}), relative l2 error\n{table.fillna('-').to_string()}"


# ---------------------------------------------------------------- presets

REFERENCE_VALUES: dict[int, dict[tuple[float, int], float]] = {
    1: {
        (0.01, 1): 0.0135, (0.01, 2): 0.0025, (0.01, 5): 0.0162, (0.01, 10): 0.0108,
        (0.05, 1): 0.0201, (0.05, 2): 0.007, (0.05, 5): 0.0025, (0.05, 10): 0.0031,
        (0.1, 1): 0.21663, (0.1, 2): 0.0608, (0.1, 5): 0.0081, (0.1, 10): 0.0039,
        (0.2, 1): 0.9753, (0.2, 2): 0.0879, (0.2, 5): 0.0059, (0.2, 10): 0.0060,
    },
    2: {
        (0.2, 1): 0.7105, (0.2, 2): 0.1418, (0.2, 5): 0.0281, (0.2, 10): 0.0034,
        (0.5, 1): 1.3040, (0.5, 2): 0.1090, (0.5, 5): 0.1976, (0.5, 10): 0.0366,
    },
    3: {
        (0.5, 1): 0.0875, (0.5, 2): 0.0312, (0.5, 5): 0.0257, (0.5, 10): 0.007,
        (1.0, 1): 0.2439, (1.0, 2): 0.0469, (1.0, 5): 0.0076, (1.0, 10): 0.0114,
        (2.0, 1): 1.0732, (2.0, 2): 0.2287, (2.0, 5): 0.0321, (2.0, 10): 0.0129,
    },
}

TABLE_SYSTEMS = {1: "cubic_oscillator", 2: "glycolytic", 3: "hopf_augmented"}

SMOKE_CELLS = {
    1: ((0.2, 1), (0.2, 5)),
    2: ((0.2, 1), (0.2, 10)),
    3: ((2.0, 1), (2.0, 10)),
}

SCALES = ("paper", "smoke")


def table_spec(table_id: int, scale: str = "paper", **overrides: Any) -> TableSpec:
    """Preset for one of the three benchmark tables.

    ``smoke`` keeps two cells showing the effect of M and cuts training to
    2000 Adam steps, 200 L-BFGS iterations and 500 pairs.
    """
    if table_id not in TABLE_SYSTEMS:
        raise ConfigurationError(f"unknown table {table_id}, expected one of {sorted(TABLE_SYSTEMS)}")
    if scale not in SCALES:
        raise ConfigurationError(f"unknown scale {scale!r}, expected one of {SCALES}")
    system = get_system(TABLE_SYSTEMS[table_id])
    settings: dict[str, Any] = dict(
        system=system.name,
        dts=system.dts,
        stages=(1, 2, 5, 10),
        eval_ics=system.eval_ics,
        horizon=system.horizon,
        eval_step=system.eval_step,
        reference=dict(REFERENCE_VALUES[table_id]),
        table_id=table_id,
    )
    if scale == "smoke":
        settings.update(
            cells=SMOKE_CELLS[table_id],
            n_pairs=500,
            train_config=TrainConfig(adam_steps=2000, lbfgs_max_iters=200),
        )
    settings.update(overrides)
    return TableSpec(**settings)
