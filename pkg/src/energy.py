"""Energy module for roaflow - residual energy E(x0) = 1/2 ||A_hat(x0) - A||_F^2.

E is finite for initial conditions inside the region of attraction and is
taken as infinite for trajectories that escape (or are not persistently
exciting). The squashed value tanh(E) drives the boundary flow.
"""

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from config import (
    CONVERGENCE_RADIUS, CSV_FLOAT_FORMAT, DEFAULT_HORIZON, ENERGY_ATOL, ENERGY_RTOL,
    ESCAPE_HORIZON, ESCAPE_RADIUS, INTEGRATION_METHOD, NEAR_ORIGIN_PROBES,
    NEAR_ORIGIN_RADIUS, PE_RELATIVE_TOL, SAMPLE_INTERVAL,
)
from errors import ExcitationError, InputError
from estimator import QUADRATURE_RULES, TRAPEZOID, fit_linear, gram_matrices
from evaluation_pool import EvaluationPool
from integrator import Termination, Trajectory, derivatives_from_samples, integrate
from systems import VectorField

logger = logging.getLogger(__name__)

A_REF_SOURCES = ('analytic', 'data')


class EnergyStatus(str, Enum):
    OK = 'ok'
    ESCAPED = 'escaped'
    PE_FAILED = 'pe_failed'


@dataclass(frozen=True)
class EnergyConfig:
    """How one residual energy value is computed."""

    horizon: float = DEFAULT_HORIZON
    dt: float = SAMPLE_INTERVAL
    escape_horizon: float = ESCAPE_HORIZON
    rule: str = TRAPEZOID
    rtol: float = ENERGY_RTOL
    atol: float = ENERGY_ATOL
    conv_radius: float = CONVERGENCE_RADIUS
    escape_radius: float = ESCAPE_RADIUS
    pe_relative_tol: float = PE_RELATIVE_TOL
    method: str = INTEGRATION_METHOD
    a_ref_source: str = 'analytic'
    near_origin_radius: float = NEAR_ORIGIN_RADIUS
    near_origin_probes: int = NEAR_ORIGIN_PROBES

    def __post_init__(self):
        if self.horizon <= 0 or self.dt <= 0:
            raise InputError(f"energy horizon and dt must be positive ({self.horizon}, {self.dt})")
        if self.dt > self.horizon:
            raise InputError(f"dt {self.dt} exceeds the energy horizon {self.horizon}")
        if self.escape_horizon < self.horizon:
            raise InputError(
                f"escape_horizon {self.escape_horizon} is shorter than the Gram horizon {self.horizon}"
            )
        if self.rule not in QUADRATURE_RULES:
            raise InputError(f"unknown quadrature rule '{self.rule}'")
        if self.a_ref_source not in A_REF_SOURCES:
            raise InputError(f"a_ref source must be one of {A_REF_SOURCES}, got '{self.a_ref_source}'")
        if self.near_origin_radius <= 0 or self.near_origin_probes < 1:
            raise InputError("near-origin radius must be positive and probes >= 1")

    @property
    def integration_horizon(self) -> float:
        return max(self.horizon, self.escape_horizon)


@dataclass(frozen=True)
class ResidualEnergy:
    """E(x0) together with its squashed value and provenance."""

    value: float
    squashed: float
    a_ref: np.ndarray = field(repr=False)
    horizon: float
    status: EnergyStatus = EnergyStatus.OK

    @classmethod
    def infinite(cls, status: EnergyStatus, a_ref, horizon: float) -> 'ResidualEnergy':
        return cls(value=float('inf'), squashed=1.0, a_ref=np.asarray(a_ref),
                   horizon=horizon, status=status)

    @classmethod
    def finite(cls, value: float, a_ref, horizon: float) -> 'ResidualEnergy':
        return cls(value=value, squashed=squash(value), a_ref=np.asarray(a_ref),
                   horizon=horizon, status=EnergyStatus.OK)


def squash(value: float) -> float:
    """Map E in [0, inf] to [0, 1] with tanh; inf maps to 1."""
    value = float(value)
    if np.isnan(value) or value < 0:
        raise InputError(f"residual energy must be non-negative, got {value}")
    if np.isinf(value):
        return 1.0
    return float(np.tanh(value))


def _check_a_ref(a_ref, n: int) -> np.ndarray:
    a_ref = np.asarray(a_ref, dtype=float)
    if a_ref.shape != (n, n):
        raise InputError(f"a_ref must be {n}x{n}, got shape {a_ref.shape}")
    return a_ref


def energy_of_trajectory(traj: Trajectory, a_ref, cfg: Optional[EnergyConfig] = None) -> ResidualEnergy:
    """Residual energy of an already recorded trajectory.

    Args:
        traj: Trajectory (derivatives are reconstructed if absent)
        a_ref: Reference Jacobian A
        cfg: Energy configuration (Gram horizon, quadrature rule, PE threshold)

    Returns:
        ResidualEnergy
    """
    cfg = cfg or EnergyConfig()
    a_ref = _check_a_ref(a_ref, traj.dimension)
    if traj.termination == Termination.ESCAPED:
        return ResidualEnergy.infinite(EnergyStatus.ESCAPED, a_ref, cfg.horizon)
    if traj.derivatives is None:
        traj = derivatives_from_samples(traj)

    g = gram_matrices(traj, rule=cfg.rule, horizon=cfg.horizon)
    pe_tol = cfg.pe_relative_tol * float(np.trace(g.gamma2))
    try:
        a_hat, _ = fit_linear(g, pe_tol)
    except ExcitationError as e:
        logger.debug(f"x0={traj.x0}: {e}")
        return ResidualEnergy.infinite(EnergyStatus.PE_FAILED, a_ref, g.horizon)
    value = 0.5 * float(np.linalg.norm(a_hat - a_ref, 'fro') ** 2)
    return ResidualEnergy.finite(value, a_ref, g.horizon)


def residual_energy(field: VectorField, x0, a_ref, cfg: Optional[EnergyConfig] = None) -> ResidualEnergy:
    """Integrate from x0 and compute E(x0).

    The trajectory is continued to `escape_horizon` so that late escapes
    still give E = inf; the Gram matrices only use the first `horizon`.
    """
    cfg = cfg or EnergyConfig()
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise InputError(f"non-finite initial condition {x0}")
    traj = integrate(
        field, x0, cfg.integration_horizon, dt=cfg.dt, rtol=cfg.rtol, atol=cfg.atol,
        conv_radius=cfg.conv_radius, escape_radius=cfg.escape_radius, method=cfg.method,
    )
    return energy_of_trajectory(traj, a_ref, cfg)


def probe_points(n: int, eps: float, probes: int, seed: int = 0) -> np.ndarray:
    """Initial conditions on the sphere of radius eps.

    Equally spaced angles in the plane; seeded random directions for n > 2.
    """
    if eps <= 0 or probes < 1:
        raise InputError(f"need eps > 0 and probes >= 1 (eps={eps}, probes={probes})")
    if n == 1:
        return eps * np.array([[1.0], [-1.0]])[:max(1, min(probes, 2))]
    if n == 2:
        angles = 2.0 * np.pi * np.arange(probes) / probes
        return eps * np.column_stack([np.cos(angles), np.sin(angles)])
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((probes, n))
    return eps * directions / np.linalg.norm(directions, axis=1, keepdims=True)


def estimate_jacobian_near_origin(source: Union[VectorField, Sequence[Trajectory]],
                                  eps: float = NEAR_ORIGIN_RADIUS,
                                  probes: int = NEAR_ORIGIN_PROBES,
                                  cfg: Optional[EnergyConfig] = None,
                                  seed: int = 0,
                                  pool: Optional[EvaluationPool] = None) -> np.ndarray:
    """Data-driven surrogate for A: average of A_hat(x0) over ||x0|| = eps.

    Args:
        source: A VectorField to probe, or recorded trajectories (those with
            ||x0|| <= eps are used)
        eps: Probe radius
        probes: Number of probe initial conditions (field source only)
        cfg: Integration/quadrature settings for the probes
        seed: Seed for probe directions in dimension > 2
        pool: Optional worker pool for the probe integrations

    Returns:
        n x n matrix
    """
    cfg = cfg or EnergyConfig()
    if isinstance(source, VectorField):
        points = probe_points(source.dimension, eps, probes, seed)

        def run(x0):
            return integrate(source, x0, cfg.horizon, dt=cfg.dt, rtol=cfg.rtol, atol=cfg.atol,
                             conv_radius=cfg.conv_radius, escape_radius=cfg.escape_radius,
                             method=cfg.method)

        if pool is not None:
            trajectories = pool.map_sync(run, points, batch_id='near-origin probes')
        else:
            trajectories = [run(p) for p in points]
    else:
        trajectories = [t for t in source if np.linalg.norm(t.x0) <= eps * (1.0 + 1e-12)]
        skipped = len(source) - len(trajectories)
        if skipped:
            logger.warning(f"Skipped {skipped} recorded trajectories starting outside radius {eps}")

    estimates = []
    last_error: Optional[ExcitationError] = None
    for traj in trajectories:
        if isinstance(traj, BaseException):
            logger.warning(f"Probe integration failed: {traj}")
            continue
        if traj.derivatives is None:
            traj = derivatives_from_samples(traj)
        g = gram_matrices(traj, rule=cfg.rule, horizon=cfg.horizon)
        try:
            a_hat, _ = fit_linear(g, cfg.pe_relative_tol * float(np.trace(g.gamma2)))
        except ExcitationError as e:
            logger.warning(f"Probe x0={traj.x0} skipped: {e}")
            last_error = e
            continue
        estimates.append(a_hat)

    if not estimates:
        if last_error is not None:
            raise last_error
        raise InputError(f"no usable near-origin trajectories within radius {eps}")
    logger.info(f"Estimated A from {len(estimates)} near-origin trajectories (eps={eps})")
    return np.mean(estimates, axis=0)


def resolve_a_ref(field: VectorField, cfg: Optional[EnergyConfig] = None, seed: int = 0,
                  pool: Optional[EvaluationPool] = None) -> np.ndarray:
    """Pick the reference Jacobian according to cfg.a_ref_source.

    'analytic' falls back to the data-driven estimate when the field has no
    registered Jacobian.
    """
    cfg = cfg or EnergyConfig()
    if cfg.a_ref_source == 'analytic' and field.analytic_jacobian_at_origin is not None:
        return np.array(field.analytic_jacobian_at_origin, dtype=float)
    if cfg.a_ref_source == 'analytic':
        logger.info(f"{field.id}: analytic Jacobian unavailable, estimating from data")
    return estimate_jacobian_near_origin(
        field, cfg.near_origin_radius, cfg.near_origin_probes, cfg, seed, pool
    )


@dataclass(frozen=True)
class GridRow:
    x1: float
    x2: float
    energy: ResidualEnergy


def grid_points(rect: Sequence[float], res: int) -> np.ndarray:
    """Row-major grid over [x1min, x1max] x [x2min, x2max] (x1 varies fastest)."""
    if len(rect) != 4:
        raise InputError(f"rect needs 4 numbers x1min,x1max,x2min,x2max, got {list(rect)}")
    x1min, x1max, x2min, x2max = (float(v) for v in rect)
    if not (x1min < x1max and x2min < x2max):
        raise InputError(f"empty rectangle {list(rect)}")
    if res < 1:
        raise InputError(f"grid resolution must be >= 1, got {res}")
    xs = np.linspace(x1min, x1max, res)
    ys = np.linspace(x2min, x2max, res)
    return np.array([(x, y) for y in ys for x in xs])


async def evaluate_energy_grid(field: VectorField, rect: Sequence[float], res: int, a_ref,
                               cfg: Optional[EnergyConfig] = None,
                               pool: Optional[EvaluationPool] = None) -> List[GridRow]:
    """Residual energy on a res x res grid, evaluated concurrently.

    Returns:
        Rows in grid order (independent of completion order)
    """
    cfg = cfg or EnergyConfig()
    if field.dimension != 2:
        raise InputError(f"energy grids are planar; {field.id} has dimension {field.dimension}")
    points = grid_points(rect, res)
    own_pool = pool is None
    pool = pool or EvaluationPool()
    try:
        results = await pool.map(lambda p: residual_energy(field, p, a_ref, cfg), points,
                                 batch_id=f"energy grid {field.id}")
    finally:
        if own_pool:
            pool.close()

    rows = []
    for p, result in zip(points, results):
        if isinstance(result, BaseException):
            logger.warning(f"Energy at {p} failed ({result}); recorded as escaped")
            result = ResidualEnergy.infinite(EnergyStatus.ESCAPED, a_ref, cfg.horizon)
        rows.append(GridRow(x1=float(p[0]), x2=float(p[1]), energy=result))
    return rows


def save_energy_grid(rows: Sequence[GridRow], path) -> Path:
    """Write x1,x2,E,tanhE,status rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['x1', 'x2', 'E', 'tanhE', 'status'])
        for row in rows:
            writer.writerow([
                format(row.x1, CSV_FLOAT_FORMAT),
                format(row.x2, CSV_FLOAT_FORMAT),
                format(row.energy.value, CSV_FLOAT_FORMAT),
                format(row.energy.squashed, CSV_FLOAT_FORMAT),
                row.energy.status.value,
            ])
    logger.info(f"Wrote {len(rows)} grid rows to {path}")
    return path
