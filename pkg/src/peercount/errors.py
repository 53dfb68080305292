"""Exception hierarchy shared by the library and the CLI."""

from typing import Any


class PeercountError(Exception):
    """Base class for all peercount errors."""


class ValidationError(PeercountError, ValueError):
    """Raised when inputs, dimensions or configuration are invalid."""


class NumericalError(PeercountError, RuntimeError):
    """Raised when a numerical routine fails to produce an answer."""


class EquilibriumError(NumericalError):
    """Fixed-point iteration for the beliefs did not converge.

    Attributes:
        last_iterate: Belief vector at the last iteration.
        residual: L1 distance between the last two iterates.
        iterations: Number of map evaluations performed.
    """

    def __init__(
        self, message: str, last_iterate: Any, residual: float, iterations: int
    ):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
        self.iterations = iterations


class OptimizationError(NumericalError):
    """The inner quasi-Newton maximization failed.

    Attributes:
        diagnostics: Optimizer status, iteration and evaluation counts and
            the gradient norm at the last accepted point.
    """

    def __init__(self, message: str, diagnostics: dict[str, Any]):
        super().__init__(message)
        self.diagnostics = diagnostics


class FormationError(NumericalError):
    """The dyadic logit did not converge.

    Attributes:
        trace: Max coefficient change per outer iteration.
    """

    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace
