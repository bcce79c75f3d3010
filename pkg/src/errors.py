"""Exception hierarchy for spectralflow.

Library code raises these; orchestration code (run_flow, the cli commands)
catches SpectralFlowError, logs it and turns it into an incomplete record or
a nonzero exit status.
"""

from typing import Optional


class SpectralFlowError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(SpectralFlowError, ValueError):
    """Invalid parameters (resolution too small, bad step size, ...)."""


class ConfigParseError(ConfigurationError):
    """Problem in config text, pinned to a key and a line when known."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.message = message
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(f"{prefix}{message}")


class DomainError(SpectralFlowError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class DegenerateMeasureError(SpectralFlowError, ValueError):
    """The represented function has zero norm on the quadrature (P_tau mu = 0)."""


class DegenerateConstraintGradientError(SpectralFlowError, ValueError):
    """The constraint gradient vanishes, so the Lagrange multiplier is undefined."""


class InitializationError(SpectralFlowError):
    """The initial ensemble cannot be rescaled onto the constraint set."""


class SolverError(SpectralFlowError, RuntimeError):
    """Iterative solver failed to converge."""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
