"""Exception types for roaflow. Each error knows the exit code the CLI reports."""

from typing import Optional

import numpy as np

from config import EXIT_INPUT, EXIT_PE, EXIT_FLOW


class RoaflowError(Exception):
    """Base class for all roaflow errors."""

    exit_code = EXIT_INPUT


class InputError(RoaflowError):
    """Malformed or inconsistent user input."""


class UnknownSystemError(InputError):
    """System id not found in the registry."""


class DimensionMismatchError(InputError):
    """A state vector does not match the system dimension."""


class TrajectoryFormatError(InputError):
    """Trajectory CSV (or in-memory trajectory) violates the schema."""


class ConfigError(InputError):
    """Preset or config file failed validation."""

    def __init__(self, message: str, issues: Optional[list] = None):
        super().__init__(message)
        self.issues = issues or []


class IntegrationError(RoaflowError):
    """The integrator produced a non-finite state."""


class ExcitationError(RoaflowError):
    """Gram matrix Gamma2 is not positive definite (trajectory not persistently exciting)."""

    exit_code = EXIT_PE

    def __init__(self, lambda_min: float, pe_tol: float):
        super().__init__(
            f"trajectory is not persistently exciting: "
            f"lambda_min(Gamma2)={lambda_min:.6g} <= pe_tol={pe_tol:.6g}"
        )
        self.lambda_min = lambda_min
        self.pe_tol = pe_tol


class RankDeficiencyError(RoaflowError):
    """Sample matrix X does not have full row rank."""

    exit_code = EXIT_PE

    def __init__(self, rank: int, expected: int):
        super().__init__(f"sample matrix is rank deficient: rank {rank} < {expected}")
        self.rank = rank
        self.expected = expected


class NonConvergenceError(RoaflowError):
    """An iteration hit its limit before meeting the tolerance."""

    def __init__(self, message: str, residual: float, final: Optional[np.ndarray] = None,
                 iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.final = final
        self.iterations = iterations


class FlowError(RoaflowError):
    """The boundary flow cannot continue."""

    exit_code = EXIT_FLOW


class DegenerateSpacingError(FlowError):
    """Coincident neighbouring curve points; no tangent can be formed."""


class CurveFoldedError(FlowError):
    """Boundary curve is no longer a simple polygon."""


class EnergyEvaluationError(FlowError):
    """Residual energy could not be evaluated at any curve point."""


class PeriodDetectionError(RoaflowError):
    """No closed orbit found on the return section."""
