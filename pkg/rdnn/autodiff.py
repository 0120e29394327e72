"""
Reverse-mode automatic differentiation over dense float64 matrices.

A :class:`Tape` records operations eagerly: every node caches its forward
value at the moment it is recorded, parents always precede children, and
:meth:`Tape.backward` walks the node list once in reverse. The primitive set
is fixed:

    add, sub, scale, matmul, hadamard, tanh, square, sum

which is enough for the feed-forward network and every residual scheme.
Elementwise binaries accept equal shapes or a 1x1 operand (scalar broadcast).

:class:`Var` wraps a node id with arithmetic operators so that the same
integrator code runs on plain ``numpy`` arrays and on tape-backed values:

```python
tape = Tape()
w = tape.var(tape.leaf([[2.0]]))
loss = (w * 3.0).tanh().square().sum()
grads = tape.backward(loss.node)
```

A tape is single-threaded; separate tapes share nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from numbers import Real
from typing import Any, Callable, Optional

import numpy as np
import numpy.typing as npt

from rdnn.errors import ContractError, DimensionError, EvaluationError, NonFiniteError

Tensor = npt.NDArray[np.float64]


class Op(str, Enum):
    LEAF = "leaf"
    CONST = "const"
    ADD = "add"
    SUB = "sub"
    SCALE = "scale"
    MATMUL = "matmul"
    HADAMARD = "hadamard"
    TANH = "tanh"
    SQUARE = "square"
    SUM = "sum"


_BINARY = {Op.ADD, Op.SUB, Op.MATMUL, Op.HADAMARD}
_UNARY = {Op.SCALE, Op.TANH, Op.SQUARE, Op.SUM}
_SCALAR_SHAPE = (1, 1)


def as_tensor(value: Any) -> Tensor:
    """Copy ``value`` into a finite 2-D float64 array (vectors become columns)."""
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(_SCALAR_SHAPE)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim > 2:
        raise DimensionError("tensor", arr.shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor has non-finite entries")
    return arr


@dataclass
class Node:
    """One recorded operation and its cached forward value."""

    op: Op
    parents: tuple[int, ...]
    value: Tensor
    factor: float = 1.0
    is_param: bool = False


def _forward(op: Op, vals: list[Tensor], factor: float) -> Tensor:
    if op in (Op.ADD, Op.SUB, Op.HADAMARD):
        a, b = vals
        if a.shape != b.shape and _SCALAR_SHAPE not in (a.shape, b.shape):
            raise DimensionError(op.value, a.shape, b.shape)
        if op is Op.ADD:
            return a + b
        if op is Op.SUB:
            return a - b
        return a * b
    if op is Op.MATMUL:
        a, b = vals
        if a.shape[1] != b.shape[0]:
            raise DimensionError(op.value, a.shape, b.shape)
        return a @ b
    (a,) = vals
    if op is Op.SCALE:
        return factor * a
    if op is Op.TANH:
        return np.tanh(a)
    if op is Op.SQUARE:
        return a * a
    return np.array([[a.sum()]])


def _unbroadcast(grad: Tensor, shape: tuple[int, ...]) -> Tensor:
    if grad.shape == shape:
        return grad
    # only scalar broadcast is recorded, so the parent must be 1x1
    return np.array([[grad.sum()]])


class Tape:
    """Ordered record of operations supporting one reverse sweep per root."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value: Any, *, param: bool = True) -> int:
        """Record an input tensor. Parameter leaves receive gradients."""
        self.nodes.append(Node(Op.LEAF if param else Op.CONST, (), as_tensor(value), is_param=param))
        return len(self.nodes) - 1

    def constant(self, value: Any) -> int:
        return self.leaf(value, param=False)

    def var(self, node: int) -> "Var":
        return Var(self, node)

    def value(self, node: int) -> Tensor:
        return self.nodes[node].value

    def record(self, op: Op | str, *parents: int, factor: Optional[float] = None) -> int:
        """Record ``op`` applied to ``parents`` and return the new node id."""
        op = Op(op)
        expected = 2 if op in _BINARY else 1 if op in _UNARY else None
        if expected is None:
            raise ContractError(f"{op.value} is not a recordable operation")
        if len(parents) != expected:
            raise ContractError(f"{op.value} takes {expected} parent(s), got {len(parents)}")
        for p in parents:
            if not 0 <= p < len(self.nodes):
                raise ContractError(f"{op.value}: unknown parent node {p}")
        if op is Op.SCALE and factor is None:
            raise ContractError("scale requires a factor")

        vals = [self.nodes[p].value for p in parents]
        with np.errstate(over="ignore", invalid="ignore"):
            out = _forward(op, vals, 1.0 if factor is None else float(factor))
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{op.value} produced non-finite values")
        self.nodes.append(Node(op, tuple(parents), out, 1.0 if factor is None else float(factor)))
        return len(self.nodes) - 1

    def backward(self, root: int) -> dict[int, Tensor]:
        """Return d(root)/d(leaf) for every parameter leaf on the tape.

        A gradient that overflows raises :class:`NonFiniteError` even when every
        forward value was finite.
        """
        if not 0 <= root < len(self.nodes):
            raise ContractError(f"unknown root node {root}")
        if self.nodes[root].value.shape != _SCALAR_SHAPE:
            raise ContractError(
                f"backward needs a scalar root, node {root} has shape {self.nodes[root].value.shape}"
            )

        adjoint: list[Optional[Tensor]] = [None] * (root + 1)
        adjoint[root] = np.ones(_SCALAR_SHAPE)
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(root, -1, -1):
                g = adjoint[i]
                node = self.nodes[i]
                if g is None or not node.parents:
                    continue
                for parent, contrib in zip(node.parents, self._vjp(node, g)):
                    contrib = _unbroadcast(contrib, self.nodes[parent].value.shape)
                    prev = adjoint[parent]
                    adjoint[parent] = contrib if prev is None else prev + contrib

        grads: dict[int, Tensor] = {}
        for i, node in enumerate(self.nodes):
            if node.is_param:
                g = adjoint[i] if i <= root else None
                if g is not None and not np.all(np.isfinite(g)):
                    raise NonFiniteError(f"gradient of leaf {i} is non-finite")
                grads[i] = np.zeros_like(node.value) if g is None else g
        return grads

    def _vjp(self, node: Node, g: Tensor) -> tuple[Tensor, ...]:
        vals = [self.nodes[p].value for p in node.parents]
        op = node.op
        if op is Op.ADD:
            return g, g
        if op is Op.SUB:
            return g, -g
        if op is Op.HADAMARD:
            a, b = vals
            return g * b, g * a
        if op is Op.MATMUL:
            a, b = vals
            return g @ b.T, a.T @ g
        if op is Op.SCALE:
            return (node.factor * g,)
        if op is Op.TANH:
            return (g * (1.0 - node.value * node.value),)
        if op is Op.SQUARE:
            return (2.0 * g * vals[0],)
        return (np.full(vals[0].shape, g[0, 0]),)


class Var:
    """Operator-overloading handle on a tape node.

    Mixed expressions with ``numpy`` arrays work in both operand orders;
    array operands are recorded as constants broadcast to this node's shape.
    """

    # make ndarray binary operators defer to the reflected Var methods
    __array_ufunc__ = None
    __slots__ = ("tape", "node")

    def __init__(self, tape: Tape, node: int) -> None:
        self.tape = tape
        self.node = node

    def __repr__(self) -> str:
        return f"Var(node={self.node}, shape={self.shape})"

    @property
    def value(self) -> Tensor:
        return self.tape.nodes[self.node].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _lift(self, other: Any) -> int:
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ContractError("operands live on different tapes")
            return other.node
        arr = np.asarray(other, dtype=np.float64)
        if arr.ndim == 0:
            return self.tape.constant(arr)
        try:
            arr = np.broadcast_to(arr, self.shape)
        except ValueError:
            raise DimensionError("broadcast", arr.shape, self.shape) from None
        return self.tape.constant(arr)

    def _new(self, op: Op, *parents: int, factor: Optional[float] = None) -> "Var":
        return Var(self.tape, self.tape.record(op, *parents, factor=factor))

    def __add__(self, other: Any) -> "Var":
        return self._new(Op.ADD, self.node, self._lift(other))

    def __radd__(self, other: Any) -> "Var":
        return self._new(Op.ADD, self._lift(other), self.node)

    def __sub__(self, other: Any) -> "Var":
        return self._new(Op.SUB, self.node, self._lift(other))

    def __rsub__(self, other: Any) -> "Var":
        return self._new(Op.SUB, self._lift(other), self.node)

    def __mul__(self, other: Any) -> "Var":
        if isinstance(other, Real):
            return self._new(Op.SCALE, self.node, factor=float(other))
        return self._new(Op.HADAMARD, self.node, self._lift(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Var":
        return self._new(Op.SCALE, self.node, factor=-1.0)

    def __truediv__(self, other: Real) -> "Var":
        if not isinstance(other, Real):
            return NotImplemented
        return self._new(Op.SCALE, self.node, factor=1.0 / float(other))

    def __matmul__(self, other: Any) -> "Var":
        if isinstance(other, Var):
            return self._new(Op.MATMUL, self.node, self._lift(other))
        return self._new(Op.MATMUL, self.node, self.tape.constant(other))

    def __rmatmul__(self, other: Any) -> "Var":
        return self._new(Op.MATMUL, self.tape.constant(other), self.node)

    def tanh(self) -> "Var":
        return self._new(Op.TANH, self.node)

    def square(self) -> "Var":
        return self._new(Op.SQUARE, self.node)

    def sum(self) -> "Var":
        return self._new(Op.SUM, self.node)


def tanh(x: Any) -> Any:
    return x.tanh() if isinstance(x, Var) else np.tanh(x)


def value_of(x: Any) -> np.ndarray:
    """Forward value of a Var, or ``x`` itself as an array."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def finite_diff_gradient(f: Callable[[np.ndarray], float], theta: Any, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if not step > 0:
        raise ContractError(f"finite difference step must be positive, got {step}")
    theta = np.array(theta, dtype=np.float64).ravel()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        plus = theta.copy()
        plus[i] += step
        minus = theta.copy()
        minus[i] -= step
        fp, fm = float(f(plus)), float(f(minus))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"objective is non-finite around coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * step)
    return grad
