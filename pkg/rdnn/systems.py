"""
Ground-truth benchmark systems and synthetic data pairs.

Three systems are registered with :class:`rdnn.SystemRegistry`:

    cubic_oscillator   damped oscillator with cubic kinetics, d = 2
    glycolytic         seven-species glycolytic oscillator, d = 7
    hopf_augmented     Hopf normal form with the parameter mu carried as the
                       first state component (mu' = 0), d = 3

Data generation follows the usual protocol: Latin hypercube samples of the
sampling box are advanced by a fixed time lag with a fine fixed-step RK4.
All right-hand sides accept a state (d,) or a batch of column states (d, N).
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from rdnn import SystemRegistry
from rdnn.errors import ConfigurationError, ContractError, DivergenceError, GenerationError
from rdnn.protocols import RightHandSide
from rdnn.residual import DataPair
from rdnn.utils._logger import get_logger

logger = get_logger(__name__)

RHS = RightHandSide

CUBIC_MATRIX = np.array([[-0.1, 2.0], [-2.0, -0.1]])

# glycolytic oscillator constants; psi_k in the S7 equation is psi * kappa
GLYCOLYTIC = {
    "J0": 2.5, "k1": 100.0, "k2": 6.0, "k3": 16.0, "k4": 100.0, "k5": 1.28,
    "k6": 12.0, "k": 1.8, "kappa": 13.0, "q": 4.0, "K1": 0.52, "psi": 0.1,
    "N": 1.0, "A": 4.0,
}

MAX_REJECTION_FRACTION = 0.1
# a 4x finer reference integration may move no pair by more than this, relative
CONVERGENCE_TOLERANCE = 1e-8
MAX_REFINEMENTS = 3


@dataclass(frozen=True, eq=False)
class Domain:
    """Axis-aligned sampling box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ConfigurationError(f"domain bounds must be vectors of equal size, got {lower.shape}, {upper.shape}")
        if not np.all(lower < upper):
            raise ConfigurationError(f"domain needs lower < upper componentwise, got {lower} and {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, points: Any) -> np.ndarray:
        """Row-wise membership for points of shape (N, d)."""
        points = np.atleast_2d(points)
        return np.all((points >= self.lower) & (points <= self.upper), axis=1)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class TrueSystem:
    name: str
    dim: int
    rhs: RHS
    domain: Domain
    dts: tuple[float, ...]
    eval_ics: tuple[tuple[float, ...], ...]
    horizon: float
    eval_step: float
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.domain.dim != self.dim:
            raise ConfigurationError(f"{self.name}: domain has dimension {self.domain.dim}, system {self.dim}")


def rhs_cubic(X: Any, t: Any = 0.0) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return CUBIC_MATRIX @ X**3


def rhs_glycolytic(S: Any, t: Any = 0.0) -> np.ndarray:
    c = GLYCOLYTIC
    S1, S2, S3, S4, S5, S6, S7 = np.asarray(S, dtype=np.float64)
    uptake = c["k1"] * S1 * S6 / (1.0 + (S6 / c["K1"]) ** c["q"])
    v2 = c["k2"] * S2 * (c["N"] - S5)
    v3 = c["k3"] * S3 * (c["A"] - S6)
    v4 = c["k4"] * S4 * S5
    v6 = c["k6"] * S2 * S5
    exchange = c["kappa"] * (S4 - S7)
    return np.stack([
        c["J0"] - uptake,
        2.0 * uptake - v2 - v6,
        v2 - v3,
        v3 - v4 - exchange,
        v2 - v4 - v6,
        -2.0 * uptake + 2.0 * v3 - c["k5"] * S6,
        c["psi"] * exchange - c["k"] * S7,
    ])


def rhs_hopf_augmented(Psi: Any, t: Any = 0.0) -> np.ndarray:
    mu, x, y = np.asarray(Psi, dtype=np.float64)
    r2 = x * x + y * y
    return np.stack([np.zeros_like(mu), mu * x + y - x * r2, -x + mu * y - y * r2])


@SystemRegistry.register("cubic_oscillator")
def cubic_oscillator() -> TrueSystem:
    return TrueSystem(
        name="cubic_oscillator",
        dim=2,
        rhs=rhs_cubic,
        domain=Domain([-2.5, -2.5], [2.5, 2.5]),
        dts=(0.01, 0.05, 0.1, 0.2),
        eval_ics=((2.0, 0.0),),
        horizon=25.0,
        eval_step=0.01,
        labels=("x", "y"),
    )


@SystemRegistry.register("glycolytic")
def glycolytic() -> TrueSystem:
    return TrueSystem(
        name="glycolytic",
        dim=7,
        rhs=rhs_glycolytic,
        domain=Domain([0.0, 0.0, 0.0, 0.0, 0.0, 0.14, 0.05], [2.0, 3.0, 0.5, 0.5, 0.5, 2.67, 0.15]),
        dts=(0.2, 0.5),
        eval_ics=((1.1, 1.0, 0.075, 0.175, 0.25, 0.9, 0.095),),
        horizon=5.0,
        eval_step=0.01,
        labels=tuple(f"S{i}" for i in range(1, 8)),
    )


@SystemRegistry.register("hopf_augmented")
def hopf_augmented() -> TrueSystem:
    return TrueSystem(
        name="hopf_augmented",
        dim=3,
        rhs=rhs_hopf_augmented,
        domain=Domain([-1.0, -2.0, -1.0], [1.0, 2.0, 1.0]),
        dts=(0.5, 1.0, 2.0),
        eval_ics=tuple((mu, 2.0, 0.0) for mu in (-0.2, -0.1, 0.2, 0.3, 0.5, 0.7)),
        horizon=75.0,
        eval_step=0.05,
        labels=("mu", "x", "y"),
    )


def get_system(name: str) -> TrueSystem:
    factory = SystemRegistry.get_factory(name)
    if factory is None:
        raise ConfigurationError(f"unknown system {name!r}, expected one of {', '.join(SystemRegistry.names())}")
    return factory()


@dataclass(frozen=True)
class ExactModel:
    """A true system's RHS standing in for a learned network."""

    system: str

    def __call__(self, phi: Any, t: Any = 0.0) -> np.ndarray:
        return get_system(self.system).rhs(phi, t)

    @property
    def state_dim(self) -> int:
        return get_system(self.system).dim


def _key_word(key: Any) -> int:
    if isinstance(key, (int, np.integer)) and key >= 0:
        return int(key)
    return zlib.crc32(repr(key).encode("utf-8"))


def derive_seed(seed: int, *keys: Any) -> int:
    """Mix ``seed`` with ``keys`` into an independent 32-bit seed.

    Integers >= 0 enter :class:`numpy.random.SeedSequence` as-is, any other
    key through the CRC-32 of its ``repr``, so derived seeds are stable
    across processes.
    """
    words = [_key_word(seed)] + [_key_word(k) for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint32)[0])


def strata(points: Any, domain: Domain, n: int) -> np.ndarray:
    """Index of the equal-width stratum each coordinate falls into, shape (N, d)."""
    points = np.atleast_2d(points)
    return np.floor((points - domain.lower) / domain.width * n).astype(int)


def lhs_sample(domain: Domain, n: int, seed: int) -> np.ndarray:
    """Latin hypercube sample of ``n`` points, one per stratum per dimension."""
    if int(n) != n or n < 1:
        raise ContractError(f"need at least one sample, got {n}")
    n = int(n)
    rng = np.random.default_rng(seed)
    perms = np.empty((n, domain.dim), dtype=int)
    offsets = np.empty((n, domain.dim))
    for j in range(domain.dim):
        perms[:, j] = rng.permutation(n)
        offsets[:, j] = rng.random(n)
    points = domain.lower + (perms + offsets) / n * domain.width
    # rounding can push a point onto the next stratum edge
    stray = strata(points, domain, n) != perms
    if np.any(stray):
        centres = domain.lower + (perms + 0.5) / n * domain.width
        points[stray] = centres[stray]
    return points


def rk4_step(rhs: RHS, phi: Any, t: Any, h: Any) -> Any:
    k1 = rhs(phi, t)
    k2 = rhs(phi + h / 2 * k1, t + h / 2)
    k3 = rhs(phi + h / 2 * k2, t + h / 2)
    k4 = rhs(phi + h * k3, t + h)
    return phi + h / 6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate(rhs: RHS, phi0: Any, t0: float, t1: float, substeps: int) -> np.ndarray:
    h = (t1 - t0) / substeps
    phi = np.asarray(phi0, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(substeps):
            phi = rk4_step(rhs, phi, t0 + i * h, h)
    return phi


def reference_integrate(rhs: RHS, phi0: Any, t0: float, t1: float, substeps: int) -> np.ndarray:
    """Classical RK4 with ``substeps`` uniform steps from ``t0`` to ``t1``."""
    if int(substeps) != substeps or substeps < 1:
        raise ContractError(f"substeps must be a positive integer, got {substeps}")
    phi = _integrate(rhs, phi0, t0, t1, int(substeps))
    if not np.all(np.isfinite(phi)):
        raise DivergenceError("reference integration produced a non-finite state", time=t1)
    return phi


def default_substeps(dt: float) -> int:
    return max(200, math.ceil(500 * dt))


def converged(coarse: np.ndarray, fine: np.ndarray) -> np.ndarray:
    """Row mask of pairs whose ``fine`` endpoint is within the tolerance of ``coarse``."""
    change = np.linalg.norm(fine - coarse, axis=1)
    return change <= CONVERGENCE_TOLERANCE * np.linalg.norm(fine, axis=1)


def _refine(
    system: TrueSystem, phi1: np.ndarray, phi2: np.ndarray, dt: float, substeps: int
) -> tuple[np.ndarray, int]:
    """Quadruple ``substeps`` until a 4x finer integration moves no pair past the tolerance."""
    for _ in range(MAX_REFINEMENTS + 1):
        finer = _integrate(system.rhs, phi1.T, 0.0, dt, 4 * substeps).T
        if np.all(converged(phi2, finer)):
            return phi2, substeps
        logger.info(f"{system.name}: {substeps} substeps not converged at dt={dt}, trying {4 * substeps}")
        phi2, substeps = finer, 4 * substeps
    raise GenerationError(
        f"{system.name}: reference integration did not converge at dt={dt} with {substeps} substeps"
    )


@dataclass(eq=False)
class TimeSeries:
    """Snapshots of one trajectory, optionally with its parameter vector mu."""

    times: np.ndarray
    states: np.ndarray
    mu: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64).ravel()
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states.reshape(-1, 1)
        if self.states.shape[0] != self.times.size:
            raise ContractError(f"{self.times.size} times but {self.states.shape[0]} states")
        if np.any(np.diff(self.times) <= 0):
            raise ContractError("series times must be strictly increasing")
        if self.mu is not None:
            self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))

    def __len__(self) -> int:
        return self.times.size


@dataclass(eq=False)
class DataPairSet:
    """Data pairs stored row-wise: ``phi1``/``phi2`` (N, d), ``t1``/``t2`` (N,)."""

    phi1: np.ndarray
    t1: np.ndarray
    phi2: np.ndarray
    t2: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.phi1 = np.atleast_2d(np.asarray(self.phi1, dtype=np.float64))
        self.phi2 = np.atleast_2d(np.asarray(self.phi2, dtype=np.float64))
        self.t1 = np.asarray(self.t1, dtype=np.float64).ravel()
        self.t2 = np.asarray(self.t2, dtype=np.float64).ravel()
        n = self.t1.size
        if self.phi1.shape != self.phi2.shape or self.phi1.shape[0] != n or self.t2.size != n:
            raise ContractError(
                f"inconsistent pair arrays: phi1 {self.phi1.shape}, phi2 {self.phi2.shape}, "
                f"t1 {self.t1.shape}, t2 {self.t2.shape}"
            )
        if n and np.any(self.t2 <= self.t1):
            bad = int(np.flatnonzero(self.t2 <= self.t1)[0])
            raise ContractError(f"pair {bad} has t2 <= t1")

    @classmethod
    def empty(cls, metadata: Optional[dict] = None) -> "DataPairSet":
        return cls(np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0)), np.zeros(0), dict(metadata or {}))

    @classmethod
    def from_pairs(cls, pairs: Sequence[DataPair], metadata: Optional[dict] = None) -> "DataPairSet":
        if not pairs:
            return cls.empty(metadata)
        return cls(
            np.stack([p.phi1 for p in pairs]),
            np.array([p.t1 for p in pairs]),
            np.stack([p.phi2 for p in pairs]),
            np.array([p.t2 for p in pairs]),
            dict(metadata or {}),
        )

    def __len__(self) -> int:
        return self.t1.size

    def __getitem__(self, j: int) -> DataPair:
        return DataPair(self.phi1[j], self.t1[j], self.phi2[j], self.t2[j])

    def __iter__(self):
        return (self[j] for j in range(len(self)))

    @property
    def dim(self) -> int:
        return self.phi1.shape[1] if len(self) else 0

    def columns(self, indices: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Batch layout ``(phi1 (d, N), t1 (N,), phi2 (d, N), t2 (N,))``."""
        idx = slice(None) if indices is None else indices
        return self.phi1[idx].T, self.t1[idx], self.phi2[idx].T, self.t2[idx]

    def subset(self, indices: Any) -> "DataPairSet":
        return DataPairSet(self.phi1[indices], self.t1[indices], self.phi2[indices], self.t2[indices],
                           dict(self.metadata))


def augment_parameters(states: Any, mu: Any) -> np.ndarray:
    """Prepend the constant parameter vector ``mu`` to every state row."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    return np.hstack([np.broadcast_to(mu, (states.shape[0], mu.size)), states])


def generate_pairs(
    system: TrueSystem,
    domain: Optional[Domain] = None,
    n_pairs: int = 1000,
    dt: float = 0.1,
    seed: int = 0,
    substeps: Optional[int] = None,
) -> DataPairSet:
    """Sample ``phi1`` by LHS and advance each sample by ``dt`` with the true model.

    Samples whose integration diverges are replaced by a fresh Latin hypercube
    block of the same size. The replacements are stratified among themselves,
    so the whole ``phi1`` set keeps the per-stratum guarantee of
    :func:`lhs_sample` only when ``metadata["rejected"]`` is 0.

    Left unset, ``substeps`` starts at :func:`default_substeps` and is quadrupled
    until integrating every pair with four times as many substeps changes no
    endpoint by more than ``CONVERGENCE_TOLERANCE`` relative. An explicit
    ``substeps`` is used as given.
    """
    if not dt > 0:
        raise ContractError(f"time lag must be positive, got {dt}")
    domain = domain or system.domain
    if domain.dim != system.dim:
        raise ConfigurationError(f"domain dimension {domain.dim} does not match {system.name} ({system.dim})")
    guarded = not substeps
    substeps = substeps or default_substeps(dt)

    phi1 = lhs_sample(domain, n_pairs, seed)
    phi2 = _integrate(system.rhs, phi1.T, 0.0, dt, substeps).T
    bad = ~np.all(np.isfinite(phi2), axis=1)

    rejected = attempt = 0
    while np.any(bad):
        idx = np.flatnonzero(bad)
        rejected += idx.size
        if rejected > MAX_REJECTION_FRACTION * n_pairs:
            raise GenerationError(
                f"{system.name}: {rejected} of {n_pairs} samples diverged within dt={dt}"
            )
        logger.warning(f"{system.name}: rejected {idx.size} diverging samples, resampling")
        attempt += 1
        phi1[idx] = lhs_sample(domain, idx.size, derive_seed(seed, "resample", attempt))
        phi2[idx] = _integrate(system.rhs, phi1[idx].T, 0.0, dt, substeps).T
        bad = np.zeros(n_pairs, dtype=bool)
        bad[idx] = ~np.all(np.isfinite(phi2[idx]), axis=1)
    if guarded:
        phi2, substeps = _refine(system, phi1, phi2, dt, substeps)

    metadata = {
        "system": system.name,
        "dt": float(dt),
        "n_pairs": int(n_pairs),
        "seed": int(seed),
        "substeps": int(substeps),
        "generator_step": float(dt / substeps),
        "domain": domain.to_dict(),
        "rejected": int(rejected),
    }
    logger.info(f"Generated {n_pairs} pairs for {system.name} (dt={dt}, seed={seed}, substeps={substeps})")
    return DataPairSet(phi1, np.zeros(n_pairs), phi2, np.full(n_pairs, float(dt)), metadata)


def pairs_from_series(series: Sequence[TimeSeries], stride: int = 1) -> DataPairSet:
    """Re-organise snapshot series into pairs ``stride`` samples apart.

    Series carrying ``mu`` contribute pairs of the parameter-augmented state.
    """
    if int(stride) != stride or stride < 1:
        raise ContractError(f"stride must be a positive integer, got {stride}")
    stride = int(stride)
    if not series:
        return DataPairSet.empty({"source": "series", "stride": stride})

    phi1, t1, phi2, t2 = [], [], [], []
    for i, s in enumerate(series):
        if len(s) < stride + 1:
            raise ContractError(f"series {i} has {len(s)} entries, stride {stride} needs {stride + 1}")
        states = s.states if s.mu is None else augment_parameters(s.states, s.mu)
        phi1.append(states[:-stride])
        phi2.append(states[stride:])
        t1.append(s.times[:-stride])
        t2.append(s.times[stride:])
    if len({p.shape[1] for p in phi1}) != 1:
        raise ContractError("series have different state dimensions")
    metadata = {"source": "series", "stride": stride, "n_series": len(series)}
    return DataPairSet(np.vstack(phi1), np.concatenate(t1), np.vstack(phi2), np.concatenate(t2), metadata)
