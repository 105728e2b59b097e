"""Exception hierarchy.

Numerical failures carry the step index at which the recursion or
simulation broke down so the CLI can report it and exit with code 2.
"""


class ApcdError(Exception):
    """Base class for all library errors."""


class ConfigError(ApcdError):
    """Malformed configuration or serialized artifact."""


class NumericalError(ApcdError):
    """A numerical operation lost well-posedness."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class SingularEmissionError(NumericalError):
    """Emission covariance is not invertible."""


class DegenerateInnovationError(NumericalError):
    """Filter innovation covariance is not positive definite."""


class IndefiniteQError(NumericalError):
    """S^-1 + Quu is not positive definite; Q-function inconsistent with prior."""


class DegeneratePropagationError(NumericalError):
    """Value propagation system is singular in the backward recursion."""


class RiskBreakdownError(NumericalError):
    """Risk-sensitive transform lost positive definiteness (lambda too large)."""


class SimulationDivergedError(NumericalError):
    """Closed-loop state left the finite range."""
