"""Exception hierarchy shared by all hydrofuse modules."""

from __future__ import annotations


class HydrofuseError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(HydrofuseError, ValueError):
    """Input data violates a documented invariant (bad index, nonpositive attribute...)."""


class StructuralError(HydrofuseError):
    """Graph-level defect: disconnected network, isolated node, missing inlet."""


class OrientationError(HydrofuseError, ValueError):
    """A head drop is negative under the supplied pipe orientation."""


class SolverError(HydrofuseError):
    """The steady-state hydraulic solver failed to converge."""

    def __init__(self, message: str, residual: float | None = None, iterations: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class OptimizationError(HydrofuseError):
    """The interpolation QP could not be solved."""


class NumericalError(HydrofuseError):
    """Linear algebra breakdown (Cholesky failure, singular innovation covariance)."""


class DivergenceError(NumericalError):
    """Estimator state became non-finite."""

    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace or []


class ParseError(HydrofuseError):
    """A file could not be parsed; carries the file name and line when known."""

    def __init__(self, path, message: str, line: int | None = None):
        where = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line
