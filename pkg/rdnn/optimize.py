"""
Training: the squared-residual loss, Adam, and an L-BFGS fine-tune.

The objective is ``sum_j ||r_j||^2`` over every data pair, built on a fresh
:class:`~rdnn.autodiff.Tape` per evaluation with the whole batch stored as
columns, so one reverse sweep yields the gradient with respect to every
network parameter. :func:`train` runs Adam first and then hands the best
iterate seen so far to :func:`lbfgs_minimize`.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass
from functools import partial
from typing import Callable, Iterator, Optional, Union

import numpy as np
from tqdm import tqdm

from rdnn.autodiff import Tape
from rdnn.errors import ConfigurationError, ContractError, DivergenceError, EvaluationError, NonFiniteError
from rdnn.network import NetworkConfig, NetworkParams, TapeNetwork, flatten, forward, init_params, with_flat
from rdnn.residual import ResidualScheme, residual_terms
from rdnn.systems import DataPairSet, derive_seed
from rdnn.utils._logger import get_logger

logger = get_logger(__name__)

Columns = tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
FAndGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]

ARMIJO_C1 = 1e-4
BACKTRACK_SHRINK = 0.5
MAX_BACKTRACKS = 60
CURVATURE_EPS = 1e-10

HISTORY_COLUMNS = ("step", "loss", "grad_norm", "phase", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    adam_steps: int = 10000
    adam_lr: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    lbfgs_max_iters: int = 5000
    lbfgs_memory: int = 10
    lbfgs_grad_tol: float = 1e-9
    seed: int = 0
    batch: Union[str, int] = "full"
    log_every: int = 100
    checkpoint_every: int = 100
    divergence_penalty: Optional[float] = None

    def __post_init__(self) -> None:
        if self.adam_steps < 0:
            raise ConfigurationError(f"adam_steps must be >= 0, got {self.adam_steps}")
        if self.lbfgs_max_iters < 0:
            raise ConfigurationError(f"lbfgs_max_iters must be >= 0, got {self.lbfgs_max_iters}")
        b1, b2 = self.adam_betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise ConfigurationError(f"adam betas must lie in (0, 1), got {self.adam_betas}")
        if not (self.adam_lr > 0 and self.adam_eps > 0 and self.lbfgs_grad_tol > 0):
            raise ConfigurationError("adam_lr, adam_eps and lbfgs_grad_tol must be positive")
        if self.lbfgs_memory < 1:
            raise ConfigurationError(f"lbfgs_memory must be >= 1, got {self.lbfgs_memory}")
        if self.log_every < 1 or self.checkpoint_every < 1:
            raise ConfigurationError("log_every and checkpoint_every must be >= 1")
        if self.divergence_penalty is not None and not self.divergence_penalty >= 0:
            raise ConfigurationError(f"divergence_penalty must be >= 0, got {self.divergence_penalty}")
        if self.batch != "full" and (isinstance(self.batch, bool) or not isinstance(self.batch, int)
                                     or self.batch < 1):
            raise ConfigurationError(f"batch must be 'full' or a positive integer, got {self.batch!r}")

    @property
    def batch_size(self) -> Optional[int]:
        return None if self.batch == "full" else int(self.batch)


@dataclass
class LossReport:
    step: int
    loss: float
    grad_norm: float
    phase: str
    seconds: float
    error: Optional[str] = None

    def to_row(self) -> dict:
        return {name: getattr(self, name) for name in HISTORY_COLUMNS}


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass
class LbfgsReport:
    iterations: int = 0
    evaluations: int = 0
    loss: float = float("nan")
    grad_norm: float = float("nan")
    reason: str = "max_iters"
    rejected_steps: int = 0


# ---------------------------------------------------------------- objective


def _check_data(params: NetworkParams, data: DataPairSet) -> None:
    if len(data) == 0:
        raise ContractError("loss needs at least one data pair")
    if data.dim != params.state_dim:
        raise ContractError(f"data has dimension {data.dim}, network state dimension is {params.state_dim}")


def _take(cols: Columns, keep: np.ndarray) -> Columns:
    phi1, t1, phi2, t2 = cols
    return phi1[:, keep], t1[keep], phi2[:, keep], t2[keep]


def _tape_loss(params: NetworkParams, scheme: ResidualScheme, cols: Columns, *, grad: bool):
    tape = Tape()
    net = TapeNetwork(params, tape)
    try:
        total = residual_terms(scheme, net, *cols).square().sum()
    except NonFiniteError as err:
        raise DivergenceError("squared residual overflowed") from err
    value = float(total.value[0, 0])
    if not grad:
        return value, None
    try:
        g = net.gradient(tape.backward(total.node))
    except NonFiniteError as err:
        raise DivergenceError("loss gradient is non-finite") from err
    return value, g


def diverging_pairs(params: NetworkParams, scheme: ResidualScheme, cols: Columns) -> np.ndarray:
    """Column indices whose residual cannot be evaluated to a finite value."""
    F = partial(forward, params)
    bad = []
    for j in range(cols[1].size):
        try:
            residual_terms(scheme, F, *_take(cols, np.array([j])))
        except DivergenceError:
            bad.append(j)
    return np.array(bad, dtype=int)


def _evaluate(
    params: NetworkParams,
    scheme: ResidualScheme,
    data: DataPairSet,
    indices: Optional[np.ndarray],
    penalty: Optional[float],
    grad: bool,
):
    _check_data(params, data)
    cols = data.columns(indices)
    try:
        return _tape_loss(params, scheme, cols, grad=grad)
    except DivergenceError as err:
        bad = diverging_pairs(params, scheme, cols)
        n = cols[1].size
        if penalty is None or bad.size == 0 or bad.size == n:
            if bad.size == 0:
                raise
            j = int(bad[0]) if indices is None else int(np.asarray(indices)[bad[0]])
            raise DivergenceError(
                f"residual of pair {j} diverged",
                segment=err.segment,
                pair_index=j,
            ) from err
        keep = np.setdiff1d(np.arange(n), bad)
        logger.debug(f"{bad.size} of {n} pairs diverged, penalised with {penalty}")
        value, g = _tape_loss(params, scheme, _take(cols, keep), grad=grad)
        return value + penalty * bad.size, g


def loss(
    params: NetworkParams,
    scheme: ResidualScheme,
    data: DataPairSet,
    *,
    indices: Optional[np.ndarray] = None,
    penalty: Optional[float] = None,
) -> float:
    """Sum of squared residual norms over ``data`` (or the pairs in ``indices``)."""
    return _evaluate(params, scheme, data, indices, penalty, grad=False)[0]


def loss_and_grad(
    params: NetworkParams,
    scheme: ResidualScheme,
    data: DataPairSet,
    *,
    indices: Optional[np.ndarray] = None,
    penalty: Optional[float] = None,
) -> tuple[float, np.ndarray]:
    """Loss and its gradient in the flat parameter layout of :func:`rdnn.network.flatten`."""
    return _evaluate(params, scheme, data, indices, penalty, grad=True)


# ---------------------------------------------------------------- optimizers


def adam_step(theta: np.ndarray, g: np.ndarray, state: AdamState, cfg: TrainConfig) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if theta.shape != g.shape or state.m.shape != theta.shape:
        raise ContractError(f"adam: parameter {theta.shape}, gradient {g.shape}, moments {state.m.shape}")
    b1, b2 = cfg.adam_betas
    k = state.step + 1
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1**k)
    v_hat = v / (1.0 - b2**k)
    return theta - cfg.adam_lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps), AdamState(m, v, k)


def _two_loop(g: np.ndarray, S: deque, Y: deque) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    if S:
        s, y = S[-1], Y[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _try(f_and_grad: FAndGrad, theta: np.ndarray) -> Optional[tuple[float, np.ndarray]]:
    try:
        f, g = f_and_grad(theta)
    except ArithmeticError:
        return None
    f = float(f)
    g = np.asarray(g, dtype=np.float64)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        return None
    return f, g


def lbfgs_minimize(
    f_and_grad: FAndGrad,
    theta0: np.ndarray,
    cfg: TrainConfig,
    *,
    callback: Optional[Callable[[int, float, float, np.ndarray], None]] = None,
) -> tuple[np.ndarray, LbfgsReport]:
    """Limited-memory BFGS with an Armijo backtracking line search.

    Trial points whose objective cannot be evaluated (or is non-finite) count
    as rejected and shrink the step, so the iterate always stays at the last
    good point. Every accepted step decreases the objective, which makes the
    returned iterate the best one seen.
    """
    theta = np.array(theta0, dtype=np.float64).ravel()
    first = _try(f_and_grad, theta)
    if first is None:
        raise EvaluationError("objective is not finite at the starting point")
    f, g = first
    report = LbfgsReport(evaluations=1, loss=f, grad_norm=float(np.linalg.norm(g)))
    S: deque = deque(maxlen=cfg.lbfgs_memory)
    Y: deque = deque(maxlen=cfg.lbfgs_memory)

    for it in range(cfg.lbfgs_max_iters):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.lbfgs_grad_tol:
            report.reason = "converged"
            break

        d = -_two_loop(g, S, Y)
        slope = float(g @ d)
        if not slope < 0:
            S.clear()
            Y.clear()
            d, slope = -g, -gnorm * gnorm
        step = 1.0 if S else min(1.0, 1.0 / gnorm)

        accepted = None
        for _ in range(MAX_BACKTRACKS):
            trial = theta + step * d
            result = _try(f_and_grad, trial)
            report.evaluations += 1
            if result is not None and result[0] <= f + ARMIJO_C1 * step * slope:
                accepted = (trial, *result)
                break
            if result is None:
                report.rejected_steps += 1
            step *= BACKTRACK_SHRINK
        if accepted is None:
            report.reason = "line_search"
            break

        trial, f_new, g_new = accepted
        s, y = trial - theta, g_new - g
        if s @ y > CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
        theta, f, g = trial, f_new, g_new
        report.iterations = it + 1
        if callback is not None:
            callback(it + 1, f, float(np.linalg.norm(g)), theta)
    else:
        if np.linalg.norm(g) <= cfg.lbfgs_grad_tol:
            report.reason = "converged"

    report.loss = f
    report.grad_norm = float(np.linalg.norm(g))
    return theta, report


# ---------------------------------------------------------------- training


def _batches(n: int, size: Optional[int], seed: int) -> Iterator[Optional[np.ndarray]]:
    if size is None or size >= n:
        while True:
            yield None
    rng = np.random.default_rng(derive_seed(seed, "batches"))
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, size):
            yield perm[start:start + size]


@dataclass
class _Best:
    loss: float
    theta: np.ndarray

    def offer(self, f: float, theta: np.ndarray) -> None:
        if f < self.loss:
            self.loss = f
            self.theta = theta.copy()


def train(
    scheme: ResidualScheme,
    data: DataPairSet,
    net_config: NetworkConfig,
    train_config: TrainConfig,
    *,
    callback: Optional[Callable[[NetworkParams, int], None]] = None,
    progress: bool = False,
    init: Optional[NetworkParams] = None,
) -> tuple[NetworkParams, list[LossReport]]:
    """Adam for ``adam_steps`` steps, then L-BFGS from the best Adam iterate.

    Returns the best parameters seen and the loss history. A divergence that
    cannot be recovered from ends training early: the best parameters so far
    are returned and the last history entry carries the error message.
    """
    cfg = train_config
    if len(data) == 0:
        raise ContractError("training needs at least one data pair")
    params0 = init or init_params(net_config.widths(data.dim), cfg.seed, autonomous=net_config.autonomous)
    if params0.state_dim != data.dim:
        raise ContractError(f"network state dimension {params0.state_dim} does not match data ({data.dim})")
    started = time.perf_counter()

    def elapsed() -> float:
        return time.perf_counter() - started

    def full(theta: np.ndarray) -> tuple[float, np.ndarray]:
        return loss_and_grad(with_flat(params0, theta), scheme, data, penalty=cfg.divergence_penalty)

    theta = flatten(params0)
    history: list[LossReport] = []
    try:
        f0, g0 = full(theta)
    except DivergenceError as err:
        logger.error(f"Loss diverged at initialization: {err}")
        history.append(LossReport(0, float("inf"), float("nan"), "init", elapsed(), str(err)))
        return params0, history
    best = _Best(f0, theta.copy())
    history.append(LossReport(0, f0, float(np.linalg.norm(g0)), "init", elapsed()))
    logger.info(f"Training {scheme} on {len(data)} pairs, {params0.n_params} parameters, initial loss {f0:.6e}")

    def checkpoint(step: int) -> None:
        if callback is not None:
            callback(with_flat(params0, best.theta), step)

    # Adam
    state = AdamState.fresh(theta.size)
    batches = _batches(len(data), cfg.batch_size, cfg.seed)
    for step in tqdm(range(1, cfg.adam_steps + 1), desc="adam", unit="step", disable=not progress, leave=False):
        idx = next(batches)
        try:
            if idx is None:
                f, g = full(theta)
                best.offer(f, theta)
            else:
                f, g = loss_and_grad(with_flat(params0, theta), scheme, data, indices=idx,
                                     penalty=cfg.divergence_penalty)
        except DivergenceError as err:
            logger.error(f"Adam step {step} diverged: {err}")
            history.append(LossReport(step, best.loss, float("nan"), "adam", elapsed(), str(err)))
            return with_flat(params0, best.theta), history
        theta, state = adam_step(theta, g, state, cfg)

        if step % cfg.log_every == 0 or step == cfg.adam_steps:
            if idx is not None:
                try:
                    f = loss(with_flat(params0, theta), scheme, data, penalty=cfg.divergence_penalty)
                    best.offer(f, theta)
                except DivergenceError:
                    f = float("inf")
            history.append(LossReport(step, f, float(np.linalg.norm(g)), "adam", elapsed()))
            logger.debug(f"adam step {step}: loss={f:.6e} |g|={np.linalg.norm(g):.3e}")
        if step % cfg.checkpoint_every == 0:
            checkpoint(step)

    if cfg.adam_steps:
        try:
            f_end, _ = full(theta)
            best.offer(f_end, theta)
        except DivergenceError as err:
            logger.warning(f"Final Adam iterate diverged, keeping best seen: {err}")
        logger.info(f"Adam phase done: best loss {best.loss:.6e}")

    # L-BFGS, always full batch
    offset = cfg.adam_steps

    def on_iteration(it: int, f: float, gnorm: float, th: np.ndarray) -> None:
        best.offer(f, th)
        if it % cfg.log_every == 0:
            history.append(LossReport(offset + it, f, gnorm, "lbfgs", elapsed()))
            logger.debug(f"lbfgs iteration {it}: loss={f:.6e} |g|={gnorm:.3e}")
        if it % cfg.checkpoint_every == 0:
            checkpoint(offset + it)

    if cfg.lbfgs_max_iters:
        try:
            _, report = lbfgs_minimize(full, best.theta, cfg, callback=on_iteration)
        except EvaluationError as err:
            history.append(LossReport(offset, best.loss, float("nan"), "lbfgs", elapsed(), str(err)))
            return with_flat(params0, best.theta), history
        logger.info(
            f"L-BFGS stopped ({report.reason}) after {report.iterations} iterations: "
            f"loss {report.loss:.6e}, |g| {report.grad_norm:.3e}"
        )
        offset += report.iterations

    result = with_flat(params0, best.theta)
    _, g_best = full(best.theta)
    history.append(LossReport(offset, best.loss, float(np.linalg.norm(g_best)), "final", elapsed()))
    checkpoint(offset)
    return result, history
