"""Systems module for roaflow - vector fields and the benchmark registry."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from config import SYSTEMS_DIR
from errors import DimensionMismatchError, InputError, UnknownSystemError

logger = logging.getLogger(__name__)

LINEAR_PREFIX = 'linear:'


@dataclass(frozen=True)
class VectorField:
    """Autonomous vector field x' = f(x) with an equilibrium at the origin."""

    id: str
    dimension: int
    func: Callable[[np.ndarray], np.ndarray]
    analytic_jacobian_at_origin: Optional[np.ndarray] = None
    description: str = ""

    def eval(self, x) -> np.ndarray:
        """Evaluate f(x).

        Args:
            x: State vector of length `dimension`

        Returns:
            Derivative vector of length `dimension`
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"system '{self.id}' expects a state of length {self.dimension}, got shape {x.shape}"
            )
        return np.asarray(self.func(x), dtype=float)

    def rhs(self, t: float, x: np.ndarray) -> np.ndarray:
        """Right-hand side in the (t, x) signature ODE solvers expect."""
        return np.asarray(self.func(x), dtype=float)

    def reversed(self) -> 'VectorField':
        """Time-reversed field x' = -f(x)."""
        jac = None
        if self.analytic_jacobian_at_origin is not None:
            jac = -self.analytic_jacobian_at_origin
        func = self.func
        return VectorField(
            id=f"{self.id}:reversed",
            dimension=self.dimension,
            func=lambda x: -np.asarray(func(x), dtype=float),
            analytic_jacobian_at_origin=jac,
            description=f"time reversal of {self.id}",
        )


def _vdp_reverse(x: np.ndarray) -> np.ndarray:
    x1, x2 = x
    return np.array([-x2, x1 - (1.0 - x1 ** 2) * x2])


def _unbounded(x: np.ndarray) -> np.ndarray:
    x1, x2 = x
    return np.array([x2, -x1 - x2 + x1 ** 3 / 3.0])


def _rational(x: np.ndarray) -> np.ndarray:
    x1, x2 = x
    denom = (1.0 + x1 ** 2) ** 2
    return np.array([-x1 / denom + x2, -(x1 + x2) / denom])


def linear_field(matrix, system_id: str = 'linear') -> VectorField:
    """Build the linear field x' = Ax.

    Args:
        matrix: Square n x n system matrix
        system_id: Registry id to attach

    Returns:
        VectorField whose analytic Jacobian is the matrix itself
    """
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f"linear system matrix must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError("linear system matrix has non-finite entries")
    a.setflags(write=False)
    return VectorField(
        id=system_id,
        dimension=a.shape[0],
        func=lambda x: a @ x,
        analytic_jacobian_at_origin=a,
        description=f"linear system of dimension {a.shape[0]}",
    )


def load_linear_matrix(path) -> np.ndarray:
    """Read a whitespace-separated n x n matrix from a text file.

    Relative paths that do not exist are looked up under SYSTEMS_DIR.
    """
    path = Path(path)
    if not path.exists() and not path.is_absolute() and (SYSTEMS_DIR / path).exists():
        path = SYSTEMS_DIR / path
    if not path.exists():
        raise UnknownSystemError(f"linear system file not found: {path}")
    try:
        matrix = np.loadtxt(path, ndmin=2, comments='#')
    except ValueError as e:
        raise InputError(f"cannot parse matrix file {path}: {e}")
    if matrix.shape[0] != matrix.shape[1]:
        raise InputError(f"matrix in {path} is not square: shape {matrix.shape}")
    return matrix


def spectral_abscissa(matrix) -> float:
    """Largest real part among the eigenvalues."""
    return float(np.max(np.linalg.eigvals(np.asarray(matrix, dtype=float)).real))


class SystemRegistry:
    """Holds the benchmark fields and resolves `linear:<file>` ids."""

    def __init__(self):
        self.systems: Dict[str, VectorField] = {}
        self._register_benchmarks()

    def _register_benchmarks(self):
        """Register the three planar benchmarks."""
        self.register(VectorField(
            id='vdp_reverse',
            dimension=2,
            func=_vdp_reverse,
            analytic_jacobian_at_origin=np.array([[0.0, -1.0], [1.0, -1.0]]),
            description="Van der Pol oscillator in reverse time (ROA bounded by a limit cycle)",
        ))
        self.register(VectorField(
            id='unbounded',
            dimension=2,
            func=_unbounded,
            analytic_jacobian_at_origin=np.array([[0.0, 1.0], [-1.0, -1.0]]),
            description="x1' = x2, x2' = -x1 - x2 + x1^3/3 (unbounded ROA)",
        ))
        self.register(VectorField(
            id='rational',
            dimension=2,
            func=_rational,
            analytic_jacobian_at_origin=np.array([[-1.0, 1.0], [-1.0, -1.0]]),
            description="rational system whose nonlinearity saturates outside the ROA",
        ))

    def register(self, field: VectorField) -> bool:
        """Add a field to the registry.

        Returns:
            True if the field was registered, False if the id was taken
        """
        if field.id in self.systems:
            logger.warning(f"System {field.id} already registered")
            return False
        self.systems[field.id] = field
        logger.debug(f"Registered system {field.id} (n={field.dimension})")
        return True

    def get(self, system_id: str) -> VectorField:
        """Resolve a system id.

        Args:
            system_id: Benchmark name or `linear:<file>`

        Returns:
            The VectorField
        """
        if system_id in self.systems:
            return self.systems[system_id]
        if system_id.startswith(LINEAR_PREFIX):
            matrix = load_linear_matrix(system_id[len(LINEAR_PREFIX):])
            return linear_field(matrix, system_id)
        raise UnknownSystemError(
            f"unknown system '{system_id}' (known: {', '.join(self.list_ids())}, linear:<file>)"
        )

    def list_ids(self) -> List[str]:
        return sorted(self.systems.keys())

    def eval_field(self, system_id: str, x) -> np.ndarray:
        """Evaluate the registered field at x."""
        return self.get(system_id).eval(x)

    def jacobian_at_origin(self, system_id: str) -> Optional[np.ndarray]:
        """Analytic Jacobian at the origin, or None when unavailable."""
        field = self.get(system_id)
        if field.analytic_jacobian_at_origin is None:
            logger.info(f"No analytic Jacobian for {system_id}; use a data-driven estimate")
            return None
        return np.array(field.analytic_jacobian_at_origin, dtype=float)


def finite_difference_jacobian(field: VectorField, x=None, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a field (at the origin by default)."""
    n = field.dimension
    x = np.zeros(n) if x is None else np.asarray(x, dtype=float)
    jac = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        jac[:, j] = (field.eval(x + e) - field.eval(x - e)) / (2.0 * step)
    return jac


# Singleton instance
system_registry = SystemRegistry()
