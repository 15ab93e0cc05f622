"""Exception hierarchy shared by every module of the toolkit."""

from __future__ import annotations


class VirError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(VirError, ValueError):
    """Array dimensions do not match what an operation needs."""


class SpecError(VirError, ValueError):
    """A reservoir or model specification violates its invariants."""


class ConfigError(VirError, ValueError):
    """An experiment configuration file is invalid."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(VirError, ValueError):
    """A dataset or checkpoint file is malformed."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ConvergenceError(VirError, ArithmeticError):
    """An iterative method stopped before meeting its tolerance.

    ``estimate`` carries the last value produced and ``tolerance`` the
    precision that value can honestly claim.
    """

    def __init__(self, message: str, estimate: float, tolerance: float | None = None):
        self.estimate = estimate
        self.tolerance = tolerance
        super().__init__(f"{message}; last estimate {estimate!r}")


class SingularMatrixError(VirError, ArithmeticError):
    """A linear system has no unique solution."""


class DegenerateError(VirError, ArithmeticError):
    """Input is degenerate for the requested computation (zero spectrum, collapsed trajectory)."""


class ConnectivityError(VirError, ValueError):
    """A graph metric needs a connected graph."""

    def __init__(self, message: str, pair: tuple[int, int]):
        self.pair = pair
        super().__init__(f"{message}: vertices {pair[0]} and {pair[1]} are not connected")


class NumericError(VirError, ArithmeticError):
    """A non-finite value appeared during training."""
