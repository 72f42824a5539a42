"""Estimator module for roaflow - best linear fit of a vector field along a trajectory.

Gamma1 = int f(s) s^T dt, Gamma2 = int s s^T dt and Gamma0 = int f(s) f(s)^T dt
are accumulated over one trajectory; the fit A_hat = Gamma1 Gamma2^-1 minimizes
J(A) = int ||f(s) - A s||^2 dt whenever Gamma2 is positive definite.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import scipy.linalg
import yaml

from config import (
    CSV_FLOAT_FORMAT, GRADIENT_FLOW_MAX_ITERS, GRADIENT_FLOW_TOL, PE_RELATIVE_TOL,
)
from errors import (
    ExcitationError, InputError, NonConvergenceError, RankDeficiencyError,
    TrajectoryFormatError,
)
from integrator import Trajectory
from systems import spectral_abscissa

logger = logging.getLogger(__name__)

TRAPEZOID = 'trapezoid'
RECTANGLE = 'rectangle'
QUADRATURE_RULES = (TRAPEZOID, RECTANGLE)


@dataclass(frozen=True)
class GramMatrices:
    """Trajectory Gram matrices and the quadrature that produced them."""

    gamma1: np.ndarray
    gamma2: np.ndarray
    gamma0: Optional[np.ndarray]
    horizon: float
    rule: str
    dt: float
    x_start: np.ndarray
    x_end: np.ndarray

    @property
    def dimension(self) -> int:
        return self.gamma2.shape[0]


@dataclass(frozen=True)
class PECheck:
    lambda_min: float
    excited: bool
    pe_tol: float


@dataclass(frozen=True)
class LinearEstimate:
    """Best linear fit A_hat(x0) and its diagnostics."""

    a_hat: np.ndarray
    x0: np.ndarray
    lambda_min_gamma2: float
    residual_cost: float
    spectral_abscissa: float
    horizon: float
    dt: float
    rule: str = TRAPEZOID
    lyapunov_margin: float = float('nan')
    observable: bool = False
    method: str = 'direct'
    iterations: int = 0

    @property
    def hurwitz(self) -> bool:
        return self.spectral_abscissa < 0.0

    def to_record(self) -> Dict[str, Any]:
        """Structured record for reports (row-major matrix entries)."""
        return {
            'a_hat': [float(v) for v in np.ravel(self.a_hat)],
            'shape': list(self.a_hat.shape),
            'x0': [float(v) for v in self.x0],
            'lambda_min_gamma2': float(self.lambda_min_gamma2),
            'residual_cost': float(self.residual_cost),
            'spectral_abscissa': float(self.spectral_abscissa),
            'lyapunov_margin': float(self.lyapunov_margin),
            'observable': bool(self.observable),
            'horizon': float(self.horizon),
            'dt': float(self.dt),
            'rule': self.rule,
            'method': self.method,
            'iterations': int(self.iterations),
        }


class ReportDumper(yaml.SafeDumper):
    """YAML dumper that writes floats with 17 significant digits."""


def _represent_float(dumper: yaml.SafeDumper, value: float):
    if np.isnan(value):
        text = '.nan'
    elif np.isinf(value):
        text = '.inf' if value > 0 else '-.inf'
    else:
        text = format(value, CSV_FLOAT_FORMAT)
        mantissa, _, exponent = text.partition('e')
        if '.' not in mantissa:
            mantissa += '.0'
        # YAML 1.1 floats need a signed exponent
        if exponent and exponent[0] not in '+-':
            exponent = '+' + exponent
        text = mantissa + ('e' + exponent if exponent else '')
    return dumper.represent_scalar('tag:yaml.org,2002:float', text)


ReportDumper.add_representer(float, _represent_float)


def format_report(estimate: LinearEstimate) -> str:
    """Render an estimate as a YAML document."""
    return yaml.dump(estimate.to_record(), Dumper=ReportDumper, sort_keys=False)


def save_report(estimate: LinearEstimate, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(format_report(estimate))
    logger.info(f"Wrote estimate report to {path}")
    return path


def _quadrature_weights(traj: Trajectory, rule: str, horizon: Optional[float]):
    """Samples and weights of the chosen rule over [t0, t0 + horizon].

    Returns:
        (states, derivatives, weights, span, dt, end_state)
    """
    if rule not in QUADRATURE_RULES:
        raise InputError(f"unknown quadrature rule '{rule}' (use {', '.join(QUADRATURE_RULES)})")
    if traj.derivatives is None:
        raise TrajectoryFormatError("missing derivatives; reconstruct them from samples first")
    if len(traj) < 2:
        raise TrajectoryFormatError("quadrature needs at least two samples")

    t0 = traj.times[0]
    if horizon is None:
        horizon = traj.span
    window = traj.truncated(horizon)
    if len(window) < 2:
        raise TrajectoryFormatError(f"horizon {horizon} covers fewer than two samples")
    dt = window.spacing()
    if dt is None:
        raise TrajectoryFormatError("quadrature requires a uniform grid")

    states = np.asarray(window.states)
    derivs = np.asarray(window.derivatives)
    m = len(window)
    if rule == TRAPEZOID:
        weights = np.full(m, dt)
        weights[0] = weights[-1] = dt / 2.0
        span = float(window.times[-1] - t0)
        end = states[-1]
    else:
        # Left Riemann sum over [t0, t0 + horizon): N = horizon/dt samples
        n = min(m, int(round(min(horizon, traj.span + dt) / dt)))
        end = states[min(n, m - 1)]
        states, derivs = states[:n], derivs[:n]
        weights = np.full(n, dt)
        span = n * dt
    return states, derivs, weights, span, dt, end


def gram_matrices(traj: Trajectory, rule: str = TRAPEZOID,
                  horizon: Optional[float] = None) -> GramMatrices:
    """Accumulate Gamma1, Gamma2, Gamma0 over a trajectory.

    Args:
        traj: Trajectory with derivatives on a uniform grid
        rule: 'trapezoid' (default) or 'rectangle' (left Riemann sums)
        horizon: Integrate over [t0, t0 + horizon] (default: whole span)

    Returns:
        GramMatrices with Gamma2 and Gamma0 symmetrized
    """
    states, derivs, w, span, dt, end = _quadrature_weights(traj, rule, horizon)
    gamma1 = np.einsum('k,ki,kj->ij', w, derivs, states)
    gamma2 = np.einsum('k,ki,kj->ij', w, states, states)
    gamma0 = np.einsum('k,ki,kj->ij', w, derivs, derivs)
    gamma2 = (gamma2 + gamma2.T) / 2.0
    gamma0 = (gamma0 + gamma0.T) / 2.0
    return GramMatrices(
        gamma1=gamma1,
        gamma2=gamma2,
        gamma0=gamma0,
        horizon=span,
        rule=rule,
        dt=dt,
        x_start=np.array(traj.states[0]),
        x_end=np.array(end),
    )


def default_pe_tol(g: GramMatrices) -> float:
    """Relative threshold: PE_RELATIVE_TOL * trace(Gamma2)."""
    return PE_RELATIVE_TOL * float(np.trace(g.gamma2))


def pe_check(g: GramMatrices, pe_tol: Optional[float] = None) -> PECheck:
    """Persistency of excitation: is lambda_min(Gamma2) above pe_tol?"""
    if pe_tol is None:
        pe_tol = default_pe_tol(g)
    lambda_min = float(np.linalg.eigvalsh(g.gamma2)[0])
    excited = lambda_min > pe_tol
    logger.debug(f"PE check: lambda_min={lambda_min:.6g}, pe_tol={pe_tol:.3g}, excited={excited}")
    return PECheck(lambda_min=lambda_min, excited=excited, pe_tol=pe_tol)


def fit_linear(g: GramMatrices, pe_tol: Optional[float] = None,
               diagnostic: bool = False) -> tuple[np.ndarray, PECheck]:
    """Solve A_hat Gamma2 = Gamma1 without forming Gamma2^-1.

    Cholesky on Gamma2; with `diagnostic` a PE failure falls back to an
    eigendecomposition pseudo-solve instead of raising.
    """
    pe = pe_check(g, pe_tol)
    if pe.excited:
        try:
            factor = scipy.linalg.cho_factor(g.gamma2, lower=True)
            return scipy.linalg.cho_solve(factor, g.gamma1.T).T, pe
        except np.linalg.LinAlgError:
            logger.debug("Cholesky failed on an excited Gamma2; using the pseudo-solve")
            if not diagnostic:
                raise ExcitationError(pe.lambda_min, pe.pe_tol)
    elif not diagnostic:
        raise ExcitationError(pe.lambda_min, pe.pe_tol)

    evals, evecs = np.linalg.eigh(g.gamma2)
    inv = np.where(evals > max(pe.pe_tol, 0.0), 1.0 / np.where(evals == 0, 1.0, evals), 0.0)
    pinv = (evecs * inv) @ evecs.T
    logger.warning(f"Pseudo-solve used: lambda_min(Gamma2)={pe.lambda_min:.3g}")
    return g.gamma1 @ pinv, pe


def cost(a_bar, traj: Trajectory, rule: str = TRAPEZOID,
         horizon: Optional[float] = None) -> float:
    """J(A) = int ||f(s) - A s||^2 dt by the same quadrature as gram_matrices."""
    a_bar = np.asarray(a_bar, dtype=float)
    states, derivs, w, _, _, _ = _quadrature_weights(traj, rule, horizon)
    residual = derivs - states @ a_bar.T
    return float(np.dot(w, np.einsum('ki,ki->k', residual, residual)))


def cost_from_grams(a_bar, g: GramMatrices) -> float:
    """Completed-square form J(A) = tr G0 - 2 tr(A^T G1) + tr(A G2 A^T)."""
    if g.gamma0 is None:
        raise InputError("Gamma0 is required for the Gram form of the cost")
    a_bar = np.asarray(a_bar, dtype=float)
    value = (np.trace(g.gamma0) - 2.0 * np.trace(a_bar.T @ g.gamma1)
             + np.trace(a_bar @ g.gamma2 @ a_bar.T))
    return max(float(value), 0.0)


def cost_split(a_bar, a_hat, g: GramMatrices) -> float:
    """Excess cost of A over the minimizer: tr[(A - A_hat) Gamma2 (A - A_hat)^T]."""
    d = np.asarray(a_bar, dtype=float) - np.asarray(a_hat, dtype=float)
    return float(np.trace(d @ g.gamma2 @ d.T))


def symmetry_defect(g: GramMatrices) -> float:
    """||2 sym(Gamma1) - (s(T)s(T)^T - x0 x0^T)||_F; zero up to quadrature error."""
    lhs = g.gamma1 + g.gamma1.T
    rhs = np.outer(g.x_end, g.x_end) - np.outer(g.x_start, g.x_start)
    return float(np.linalg.norm(lhs - rhs, 'fro'))


def is_observable(a, c) -> bool:
    """Rank test on the observability matrix of the pair (a, c)."""
    a = np.asarray(a, dtype=float)
    c = np.atleast_2d(np.asarray(c, dtype=float))
    n = a.shape[0]
    blocks = [c]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ a)
    obs = np.vstack(blocks)
    if not np.any(obs):
        return False
    return int(np.linalg.matrix_rank(obs)) == n


def _build_estimate(a_hat: np.ndarray, g: GramMatrices, pe: PECheck, residual_cost: float,
                    method: str, iterations: int = 0) -> LinearEstimate:
    lyap = a_hat @ g.gamma2 + g.gamma2 @ a_hat.T
    return LinearEstimate(
        a_hat=a_hat,
        x0=np.array(g.x_start),
        lambda_min_gamma2=pe.lambda_min,
        residual_cost=residual_cost,
        spectral_abscissa=spectral_abscissa(a_hat),
        horizon=g.horizon,
        dt=g.dt,
        rule=g.rule,
        lyapunov_margin=float(np.max(np.linalg.eigvalsh((lyap + lyap.T) / 2.0))),
        observable=is_observable(a_hat.T, g.x_start),
        method=method,
        iterations=iterations,
    )


def minimizer(g: GramMatrices, traj: Trajectory, pe_tol: Optional[float] = None,
              diagnostic: bool = False) -> LinearEstimate:
    """Global minimizer A_hat(x0) = Gamma1 Gamma2^-1 by a Cholesky solve.

    Args:
        g: Gram matrices of `traj`
        traj: Trajectory the Gram matrices came from (for the residual cost)
        pe_tol: PE threshold (default: relative to trace(Gamma2))
        diagnostic: Fall back to a pseudo-solve instead of refusing on PE failure

    Returns:
        LinearEstimate
    """
    a_hat, pe = fit_linear(g, pe_tol, diagnostic)
    residual = cost(a_hat, traj, rule=g.rule, horizon=g.horizon)
    return _build_estimate(a_hat, g, pe, residual, method='direct')


def minimizer_gradient_flow(g: GramMatrices, b0=None, step: Optional[float] = None,
                            max_iters: int = GRADIENT_FLOW_MAX_ITERS,
                            tol: float = GRADIENT_FLOW_TOL,
                            pe_tol: Optional[float] = None) -> LinearEstimate:
    """Explicit-Euler discretization of the matrix flow B' = Gamma1 - B Gamma2.

    Args:
        g: Gram matrices
        b0: Initial matrix (default zero)
        step: Euler step; must be below 2/lambda_max(Gamma2) (default 1/lambda_max)
        max_iters: Iteration limit
        tol: Stop once ||Gamma1 - B Gamma2||_F < tol

    Returns:
        LinearEstimate with `iterations` set
    """
    pe = pe_check(g, pe_tol)
    if not pe.excited:
        raise ExcitationError(pe.lambda_min, pe.pe_tol)

    lambda_max = float(np.linalg.eigvalsh(g.gamma2)[-1])
    if step is None:
        step = 1.0 / lambda_max
    if not 0.0 < step < 2.0 / lambda_max:
        raise InputError(
            f"step {step:.6g} outside the stable range (0, {2.0 / lambda_max:.6g})"
        )

    n = g.dimension
    b = np.zeros((n, n)) if b0 is None else np.array(b0, dtype=float)
    iterations = 0
    residual = g.gamma1 - b @ g.gamma2
    res_norm = float(np.linalg.norm(residual, 'fro'))
    while res_norm >= tol:
        if iterations >= max_iters:
            raise NonConvergenceError(
                f"gradient flow did not converge in {max_iters} iterations "
                f"(residual {res_norm:.3g} >= {tol:.3g})",
                residual=res_norm, final=b, iterations=iterations,
            )
        b = b + step * residual
        iterations += 1
        residual = g.gamma1 - b @ g.gamma2
        res_norm = float(np.linalg.norm(residual, 'fro'))

    logger.debug(f"Gradient flow converged in {iterations} iterations (residual {res_norm:.3g})")
    residual_cost = cost_from_grams(b, g) if g.gamma0 is not None else float('nan')
    return _build_estimate(b, g, pe, residual_cost, method='gradient', iterations=iterations)


def discrete_minimizer(x, x_dot) -> np.ndarray:
    """Sampled-data estimator X_dot X^+ (Moore-Penrose pseudo-inverse).

    Args:
        x: n x N matrix of sampled states (columns are samples)
        x_dot: n x N matrix of sampled derivatives

    Returns:
        n x n matrix
    """
    x = np.asarray(x, dtype=float)
    x_dot = np.asarray(x_dot, dtype=float)
    if x.ndim != 2 or x.shape != x_dot.shape:
        raise InputError(f"X and X_dot must be matching n x N matrices, got {x.shape} and {x_dot.shape}")
    n = x.shape[0]
    rank = int(np.linalg.matrix_rank(x))
    if rank < n:
        raise RankDeficiencyError(rank, n)
    return x_dot @ np.linalg.pinv(x)


def sample_matrices(traj: Trajectory, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
    """First N states and derivatives as n x N column matrices."""
    if traj.derivatives is None:
        raise TrajectoryFormatError("missing derivatives")
    if n_samples > len(traj):
        raise InputError(f"trajectory has {len(traj)} samples, {n_samples} requested")
    return (np.asarray(traj.states[:n_samples]).T,
            np.asarray(traj.derivatives[:n_samples]).T)
