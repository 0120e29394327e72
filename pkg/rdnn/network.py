"""
Feed-forward network approximating the right-hand side F(phi, t).

Hidden layers apply ``tanh``; the output layer is affine. The parameters are
immutable once built; training produces new :class:`NetworkParams` through
:func:`unflatten`.

Flattening order is fixed: ``W2`` (row-major), ``b2``, ``W3``, ``b3``, ...
where layer ``k`` maps width ``n_{k-1}`` to ``n_k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from rdnn.autodiff import Tape, Var
from rdnn.errors import ConfigurationError, ContractError


ACTIVATIONS = ("tanh",)
CHECKPOINT_FORMAT = "rdnn-checkpoint"
CHECKPOINT_VERSION = 1


def _check_widths(widths: Sequence[int]) -> tuple[int, ...]:
    try:
        widths = tuple(int(w) for w in widths)
    except (TypeError, ValueError):
        raise ConfigurationError(f"widths must be integers, got {widths!r}") from None
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ConfigurationError(f"widths need at least two positive entries, got {widths}")
    return widths


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture of the RHS network, independent of the state dimension."""

    hidden: tuple[int, ...] = (128,)
    autonomous: bool = True
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if any(int(w) < 1 for w in self.hidden):
            raise ConfigurationError(f"hidden widths must be positive, got {self.hidden}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unsupported activation {self.activation!r}")

    def widths(self, state_dim: int) -> tuple[int, ...]:
        n_in = state_dim if self.autonomous else state_dim + 1
        return (n_in, *(int(w) for w in self.hidden), state_dim)


@dataclass(frozen=True, eq=False)
class NetworkParams:
    widths: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    autonomous: bool = True
    activation: str = "tanh"
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        widths = _check_widths(self.widths)
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ContractError("need one weight matrix and one bias per layer")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (widths[k + 1], widths[k]) or b.shape != (widths[k + 1],):
                raise ContractError(
                    f"layer {k + 2}: expected W {widths[k + 1]}x{widths[k]} and b {widths[k + 1]}, "
                    f"got {W.shape} and {b.shape}"
                )
        expected_in = widths[-1] if self.autonomous else widths[-1] + 1
        if widths[0] != expected_in:
            raise ContractError(
                f"input width {widths[0]} does not match state dimension {widths[-1]} "
                f"({'autonomous' if self.autonomous else 'time-dependent'})"
            )
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unsupported activation {self.activation!r}")

    @property
    def state_dim(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        return parameter_count(self.widths)


def parameter_count(widths: Sequence[int]) -> int:
    widths = _check_widths(widths)
    return sum(widths[k + 1] * widths[k] + widths[k + 1] for k in range(len(widths) - 1))


def init_params(widths: Sequence[int], seed: int, *, autonomous: bool = True) -> NetworkParams:
    """Glorot-uniform weights, zero biases, fully determined by ``seed``."""
    widths = _check_widths(widths)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_prev, n_next in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (n_prev + n_next))
        weights.append(rng.uniform(-limit, limit, size=(n_next, n_prev)))
        biases.append(np.zeros(n_next))
    return NetworkParams(widths, tuple(weights), tuple(biases), autonomous=autonomous, seed=seed)


def _append_time(a: np.ndarray, t: Any) -> np.ndarray:
    if a.ndim == 1:
        return np.concatenate([a, [float(np.asarray(t))]])
    trow = np.broadcast_to(np.asarray(t, dtype=np.float64), (a.shape[1],)).reshape(1, -1)
    return np.vstack([a, trow])


def forward(params: NetworkParams, phi: Any, t: Any = 0.0) -> np.ndarray:
    """Evaluate the network on a state (d,) or a batch of column states (d, N)."""
    a = np.asarray(phi, dtype=np.float64)
    if a.ndim not in (1, 2) or a.shape[0] != params.state_dim:
        raise ContractError(f"state of shape {a.shape} does not match state dimension {params.state_dim}")
    if not params.autonomous:
        a = _append_time(a, t)
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = W @ a + (b if a.ndim == 1 else b[:, None])
        a = np.tanh(z) if k < last else z
    return a


class TapeNetwork:
    """The network recorded on a tape, parameters registered as leaves.

    Calling it with a column batch (d, N) of arrays or :class:`Var` returns a
    :class:`Var` of the same shape. :meth:`gradient` gathers the leaf
    gradients back into the flat layout of :func:`flatten`.
    """

    def __init__(self, params: NetworkParams, tape: Tape) -> None:
        self.params = params
        self.tape = tape
        self.weights = [tape.var(tape.leaf(W)) for W in params.weights]
        self.biases = [tape.var(tape.leaf(b.reshape(-1, 1))) for b in params.biases]

    def __call__(self, phi: Any, t: Any = 0.0) -> Var:
        a = phi if isinstance(phi, Var) else np.asarray(phi, dtype=np.float64)
        if not isinstance(a, Var) and a.ndim == 1:
            a = a.reshape(-1, 1)
        d = self.params.state_dim
        if len(a.shape) != 2 or a.shape[0] != d:
            raise ContractError(f"state of shape {a.shape} does not match state dimension {d}")
        n = a.shape[1]
        if not self.params.autonomous:
            embed_state = np.eye(d + 1, d)
            embed_time = np.zeros((d + 1, 1))
            embed_time[d, 0] = 1.0
            trow = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)).reshape(1, -1)
            a = embed_state @ a + embed_time @ trow
        ones = np.ones((1, n))
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = W @ a + b @ ones
            a = z.tanh() if k < last else z
        return a

    def gradient(self, grads: dict[int, np.ndarray]) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(grads[W.node].ravel())
            parts.append(grads[b.node].ravel())
        return np.concatenate(parts)


def flatten(params: NetworkParams) -> np.ndarray:
    parts = []
    for W, b in zip(params.weights, params.biases):
        parts.append(W.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def unflatten(
    flat: Any,
    widths: Sequence[int],
    *,
    autonomous: bool = True,
    activation: str = "tanh",
    seed: Optional[int] = None,
) -> NetworkParams:
    widths = _check_widths(widths)
    flat = np.asarray(flat, dtype=np.float64).ravel()
    expected = parameter_count(widths)
    if flat.size != expected:
        raise ContractError(f"flat vector has {flat.size} entries, widths {widths} need {expected}")
    weights, biases = [], []
    pos = 0
    for n_prev, n_next in zip(widths[:-1], widths[1:]):
        weights.append(flat[pos:pos + n_next * n_prev].reshape(n_next, n_prev).copy())
        pos += n_next * n_prev
        biases.append(flat[pos:pos + n_next].copy())
        pos += n_next
    return NetworkParams(widths, tuple(weights), tuple(biases), autonomous=autonomous,
                         activation=activation, seed=seed)


def with_flat(params: NetworkParams, flat: Any) -> NetworkParams:
    """A copy of ``params`` carrying the parameter vector ``flat``."""
    return unflatten(flat, params.widths, autonomous=params.autonomous,
                     activation=params.activation, seed=params.seed)


def to_checkpoint(params: NetworkParams, scheme: Optional[dict] = None, **extra: Any) -> dict:
    """JSON-ready checkpoint layout.

    ``params`` holds floats whose ``repr`` round-trips bit-exactly.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": "network",
        "widths": list(params.widths),
        "autonomous": params.autonomous,
        "activation": params.activation,
        "seed": params.seed,
        "scheme": scheme,
        "params": [float(x) for x in flatten(params)],
    }
    payload.update(extra)
    return payload


def from_checkpoint(payload: dict) -> NetworkParams:
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("kind", "network") != "network":
        raise ContractError("not a network checkpoint")
    return unflatten(
        payload["params"],
        payload["widths"],
        autonomous=bool(payload.get("autonomous", True)),
        activation=payload.get("activation", "tanh"),
        seed=payload.get("seed"),
    )
