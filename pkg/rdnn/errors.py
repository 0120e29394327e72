"""Exception types raised across rdnn.

The CLI maps these onto exit codes, see ``rdnn.__main__.main``.
"""

from __future__ import annotations

from typing import Optional


class RDNNError(Exception):
    """Base class for every error raised on purpose by rdnn."""


class ConfigurationError(RDNNError, ValueError):
    """A configuration value violates a documented invariant."""


class ContractError(RDNNError, ValueError):
    """A function was called outside its preconditions."""


class DimensionError(ContractError):
    """Operand shapes do not conform to the requested operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...]) -> None:
        self.op = op
        self.shapes = shapes
        rendered = " and ".join("x".join(str(n) for n in s) for s in shapes)
        super().__init__(f"{op}: nonconforming shapes {rendered}")


class NonFiniteError(ContractError):
    """A tensor holds NaN or Inf entries."""


class EvaluationError(RDNNError, ArithmeticError):
    """An objective returned a non-finite value."""


class DivergenceError(RDNNError, ArithmeticError):
    """An integration produced a non-finite state."""

    def __init__(
        self,
        message: str,
        *,
        segment: Optional[int] = None,
        pair_index: Optional[int] = None,
        time: Optional[float] = None,
    ) -> None:
        self.segment = segment
        self.pair_index = pair_index
        self.time = time
        details = []
        if pair_index is not None:
            details.append(f"pair {pair_index}")
        if segment is not None:
            details.append(f"segment {segment}")
        if time is not None:
            details.append(f"t={time:g}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")


class GenerationError(RDNNError, RuntimeError):
    """Synthetic data generation rejected too many samples."""


class DataFormatError(RDNNError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, path: str, message: str, row: Optional[int] = None) -> None:
        self.path = path
        self.row = row
        where = f"{path}, row {row}" if row is not None else path
        super().__init__(f"{where}: {message}")
