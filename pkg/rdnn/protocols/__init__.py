"""
Protocol definitions shared by the training and evaluation code.

Protocol checking uses duck typing, so plain functions such as
``rdnn.systems.rhs_cubic``, ``functools.partial(rdnn.network.forward, params)``
and ``rdnn.network.TapeNetwork`` instances all satisfy :class:`RightHandSide`
without inheriting from it.
"""

from typing import Any, Protocol, runtime_checkable


@runtime_checkable
class RightHandSide(Protocol):
    """The kinetic term F(phi, t) of an autonomous or time-dependent ODE.

    ``phi`` is a state vector of shape (d,) or a batch of states stored as
    columns, shape (d, N). ``t`` is a scalar or an array broadcastable
    against the batch axis. The return value has the shape of ``phi``.
    """

    def __call__(self, phi: Any, t: Any) -> Any:
        ...
