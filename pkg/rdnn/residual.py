"""
Physics-informed residuals: the mismatch between the second snapshot of a
data pair and the first snapshot advanced by an integrator driven by F.

Single-step schemes (``M = 1``)::

    euler_forward   phi2 - phi1 - h F(phi1, t1)
    euler_backward  phi2 - phi1 - h F(phi2, t2)
    trapezoid       phi2 - phi1 - h/2 (F(phi1, t1) + F(phi2, t2))

Recursive schemes split ``[t1, t2]`` into ``M`` uniform segments of width
``(t2 - t1) / M`` and return ``phi2 - phi_M`` after ``M`` explicit Euler or
classical Runge-Kutta steps.

All functions are written against array arithmetic only, so they run
unchanged on ``numpy`` values and on :class:`rdnn.autodiff.Var` values
produced by a tape-backed F. Batches are stored as columns: states
``(d, N)``, times ``(N,)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np

from rdnn.autodiff import Var, value_of
from rdnn.errors import ConfigurationError, ContractError, DivergenceError, NonFiniteError
from rdnn.protocols import RightHandSide


class SchemeKind(str, Enum):
    EULER_FORWARD = "euler_forward"
    EULER_BACKWARD = "euler_backward"
    TRAPEZOID = "trapezoid"
    RECURSIVE_EULER = "recursive_euler"
    RECURSIVE_RK4 = "recursive_rk4"

    @property
    def recursive(self) -> bool:
        return self in (SchemeKind.RECURSIVE_EULER, SchemeKind.RECURSIVE_RK4)


@dataclass(frozen=True)
class ResidualScheme:
    kind: SchemeKind
    stages: int = 1

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", SchemeKind(self.kind))
        except ValueError:
            choices = ", ".join(k.value for k in SchemeKind)
            raise ConfigurationError(f"unknown scheme {self.kind!r}, expected one of {choices}") from None
        if isinstance(self.stages, bool) or int(self.stages) != self.stages or self.stages < 1:
            raise ConfigurationError(f"stages must be a positive integer, got {self.stages!r}")
        object.__setattr__(self, "stages", int(self.stages))
        if not self.kind.recursive and self.stages != 1:
            raise ConfigurationError(f"{self.kind.value} is single-step, stages must be 1 (got {self.stages})")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "stages": self.stages}

    @classmethod
    def from_dict(cls, payload: dict) -> "ResidualScheme":
        return cls(payload["kind"], int(payload.get("stages", 1)))

    def __str__(self) -> str:
        return f"{self.kind.value}(M={self.stages})"


@dataclass(frozen=True, eq=False)
class DataPair:
    """Two snapshots ``(phi1, t1)`` and ``(phi2, t2)`` of one trajectory."""

    phi1: np.ndarray
    t1: float
    phi2: np.ndarray
    t2: float

    def __post_init__(self) -> None:
        phi1 = np.atleast_1d(np.asarray(self.phi1, dtype=np.float64))
        phi2 = np.atleast_1d(np.asarray(self.phi2, dtype=np.float64))
        if phi1.ndim != 1 or phi1.shape != phi2.shape:
            raise ContractError(f"pair states must be vectors of equal size, got {phi1.shape} and {phi2.shape}")
        if not float(self.t2) > float(self.t1):
            raise ContractError(f"pair needs t2 > t1, got t1={self.t1}, t2={self.t2}")
        object.__setattr__(self, "phi1", phi1)
        object.__setattr__(self, "phi2", phi2)
        object.__setattr__(self, "t1", float(self.t1))
        object.__setattr__(self, "t2", float(self.t2))

    @property
    def h(self) -> float:
        return self.t2 - self.t1


def partition(t1: float, t2: float, M: int) -> np.ndarray:
    """Uniform nodes ``tau_0 = t1 < ... < tau_M = t2``."""
    if int(M) != M or M < 1:
        raise ContractError(f"need M >= 1, got {M}")
    if not t2 > t1:
        raise ContractError(f"need t2 > t1, got t1={t1}, t2={t2}")
    tau = t1 + np.arange(int(M) + 1) * ((t2 - t1) / M)
    tau[-1] = t2
    return tau


def _ensure_finite(x: Any, message: str, segment: int) -> None:
    if not np.all(np.isfinite(value_of(x))):
        raise DivergenceError(message, segment=segment)


def _times(t1: Any, t2: Any) -> tuple[np.ndarray, np.ndarray]:
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    if np.any(t2 <= t1):
        raise ContractError("every pair needs t2 > t1")
    return t1, t2


def rollout(scheme: ResidualScheme, F: RightHandSide, phi1: Any, t1: Any, t2: Any) -> Any:
    """Advance ``phi1`` from ``t1`` to ``t2`` with the scheme's recursion."""
    if not scheme.kind.recursive:
        raise ContractError(f"rollout needs a recursive scheme, got {scheme.kind.value}")
    t1, t2 = _times(t1, t2)
    M = scheme.stages
    h = (t2 - t1) / M
    rk4 = scheme.kind is SchemeKind.RECURSIVE_RK4

    phi = phi1
    for s in range(M):
        tau = t1 + s * h
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                if rk4:
                    k1 = F(phi, tau)
                    k2 = F(phi + h / 2 * k1, tau + h / 2)
                    k3 = F(phi + h / 2 * k2, tau + h / 2)
                    k4 = F(phi + h * k3, t1 + (s + 1) * h)
                    phi = phi + h / 6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                else:
                    phi = phi + h * F(phi, tau)
        except NonFiniteError as err:
            raise DivergenceError("non-finite state in rollout", segment=s) from err
        _ensure_finite(phi, "non-finite state in rollout", s)
    return phi


def residual_terms(scheme: ResidualScheme, F: RightHandSide, phi1: Any, t1: Any, phi2: Any, t2: Any) -> Any:
    """Residual of a batch of pairs stored as columns (or of a single pair)."""
    if scheme.kind.recursive:
        return phi2 - rollout(scheme, F, phi1, t1, t2)

    t1, t2 = _times(t1, t2)
    h = t2 - t1
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            if scheme.kind is SchemeKind.EULER_FORWARD:
                r = phi2 - phi1 - h * F(phi1, t1)
            elif scheme.kind is SchemeKind.EULER_BACKWARD:
                r = phi2 - phi1 - h * F(phi2, t2)
            else:
                r = phi2 - phi1 - h / 2 * (F(phi1, t1) + F(phi2, t2))
    except NonFiniteError as err:
        raise DivergenceError(f"non-finite {scheme.kind.value} residual", segment=0) from err
    _ensure_finite(r, f"non-finite {scheme.kind.value} residual", 0)
    return r


def residual(scheme: ResidualScheme, pair: DataPair, F: RightHandSide) -> Any:
    """Residual vector of one data pair.

    Returns a ``(d,)`` array for plain F and a ``(d, 1)`` :class:`Var` for a
    tape-backed F.
    """
    r = residual_terms(
        scheme,
        F,
        pair.phi1.reshape(-1, 1),
        np.array([pair.t1]),
        pair.phi2.reshape(-1, 1),
        np.array([pair.t2]),
    )
    return r if isinstance(r, Var) else np.asarray(r).reshape(-1)
