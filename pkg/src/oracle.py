"""Oracle module for roaflow - independent ground truth for region-of-attraction results.

Membership by long integration, the reference Van der Pol limit cycle and the
Hausdorff distance between curves. Nothing in the estimation pipeline calls
into this module; tests and the CLI comparison do.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.integrate import solve_ivp

from boundary import BoundaryCurve
from config import (
    CONVERGENCE_RADIUS, ESCAPE_RADIUS, MIN_CURVE_POINTS, ORACLE_ATOL, ORACLE_CYCLE_POINTS,
    ORACLE_RTOL, ORACLE_T_MAX, ORACLE_TRANSIENT,
)
from errors import DimensionMismatchError, InputError, PeriodDetectionError
from evaluation_pool import EvaluationPool
from systems import VectorField, system_registry

logger = logging.getLogger(__name__)

# Van der Pol (mu = 1) start point and closure tolerance of the detected period
CYCLE_START = (2.0, 0.0)
CYCLE_CLOSURE_TOL = 1e-6
CYCLE_SEARCH_SPAN = 30.0


class Membership(str, Enum):
    INSIDE = 'inside'
    OUTSIDE = 'outside'
    UNDECIDED = 'undecided'


def roa_membership(field: VectorField, x0, t_max: float = ORACLE_T_MAX,
                   conv_radius: float = CONVERGENCE_RADIUS,
                   escape_radius: float = ESCAPE_RADIUS,
                   rtol: float = ORACLE_RTOL, atol: float = ORACLE_ATOL) -> Membership:
    """Classify x0 by integrating until it converges, escapes or t_max passes.

    A solver failure (finite-time blow-up outrunning the step size) counts as outside.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (field.dimension,):
        raise DimensionMismatchError(
            f"x0 has shape {x0.shape}, system '{field.id}' has dimension {field.dimension}"
        )
    if t_max <= 0:
        raise InputError(f"t_max must be positive, got {t_max}")

    norm0 = np.linalg.norm(x0)
    if norm0 < conv_radius:
        return Membership.INSIDE
    if norm0 > escape_radius:
        return Membership.OUTSIDE

    def converged(t, x):
        return np.linalg.norm(x) - conv_radius
    converged.terminal = True
    converged.direction = -1

    def escaped(t, x):
        return np.linalg.norm(x) - escape_radius
    escaped.terminal = True
    escaped.direction = 1

    sol = solve_ivp(field.rhs, (0.0, t_max), x0, method='DOP853', rtol=rtol, atol=atol,
                    events=[converged, escaped])
    if sol.status == -1:
        logger.debug(f"{field.id}: solver failed from {x0} ({sol.message}); outside")
        return Membership.OUTSIDE
    if sol.t_events[0].size:
        return Membership.INSIDE
    if sol.t_events[1].size:
        return Membership.OUTSIDE
    return Membership.UNDECIDED


async def roa_membership_batch(field: VectorField, points: Sequence, pool: Optional[EvaluationPool] = None,
                               **kwargs) -> List[Membership]:
    """Membership of many points, evaluated concurrently, in input order."""
    own_pool = pool is None
    pool = pool or EvaluationPool()
    try:
        results = await pool.map(lambda p: roa_membership(field, p, **kwargs),
                                 [np.asarray(p, dtype=float) for p in points],
                                 batch_id=f"membership {field.id}")
    finally:
        if own_pool:
            pool.close()

    labels = []
    for p, result in zip(points, results):
        if isinstance(result, BaseException):
            logger.warning(f"Membership of {p} failed ({result}); undecided")
            result = Membership.UNDECIDED
        labels.append(result)
    undecided = sum(1 for m in labels if m == Membership.UNDECIDED)
    if undecided:
        logger.warning(f"{undecided}/{len(labels)} points undecided for {field.id}")
    return labels


@dataclass(frozen=True)
class PeriodicOrbit:
    """One detected period of an attracting closed orbit."""

    period: float
    section_point: np.ndarray
    closure_error: float


def _section_crossing(t, x):
    return x[1]
_section_crossing.direction = -1


def detect_period(field: VectorField, start=CYCLE_START, transient: float = ORACLE_TRANSIENT,
                  rtol: float = ORACLE_RTOL, atol: float = ORACLE_ATOL):
    """Return (PeriodicOrbit, dense solution) for the orbit reached from start.

    Integrates for `transient` time units, then records downward crossings of
    the section x2 = 0 (x1 > 0 for a clockwise rotation) and takes the time
    between the first two as the period.
    """
    settle = solve_ivp(field.rhs, (0.0, transient), np.asarray(start, dtype=float),
                       method='DOP853', rtol=rtol, atol=atol)
    if settle.status != 0:
        raise PeriodDetectionError(f"transient integration failed: {settle.message}")
    x_settled = settle.y[:, -1]

    sol = solve_ivp(field.rhs, (0.0, CYCLE_SEARCH_SPAN), x_settled, method='DOP853',
                    rtol=rtol, atol=atol, events=_section_crossing, dense_output=True)
    crossings = [t for t, y in zip(sol.t_events[0], sol.y_events[0]) if y[0] > 0]
    if len(crossings) < 2:
        raise PeriodDetectionError(
            f"found {len(crossings)} section crossings in {CYCLE_SEARCH_SPAN} time units; need 2"
        )
    t_a, t_b = crossings[0], crossings[1]
    x_a, x_b = sol.sol(t_a), sol.sol(t_b)
    closure = float(np.linalg.norm(x_b - x_a))
    if closure > CYCLE_CLOSURE_TOL:
        raise PeriodDetectionError(
            f"orbit did not close after transient {transient}: return error {closure:.3g}"
        )
    orbit = PeriodicOrbit(period=float(t_b - t_a), section_point=np.asarray(x_a), closure_error=closure)
    logger.debug(f"Period {orbit.period:.8f} at section point {x_a} (closure {closure:.2e})")
    return orbit, sol, t_a


def reference_limit_cycle(n_points: int = ORACLE_CYCLE_POINTS, transient: float = ORACLE_TRANSIENT,
                          rtol: float = ORACLE_RTOL, atol: float = ORACLE_ATOL) -> BoundaryCurve:
    """The unstable limit cycle of vdp_reverse sampled at D points.

    Forward Van der Pol (the time-reversed field) attracts to the cycle and
    runs clockwise; samples are reordered counterclockwise, starting at the
    section point (x1 max, x2 = 0).
    """
    if n_points < MIN_CURVE_POINTS:
        raise InputError(f"a boundary curve needs at least {MIN_CURVE_POINTS} points, got {n_points}")
    forward = system_registry.get('vdp_reverse').reversed()
    orbit, sol, t_a = detect_period(forward, CYCLE_START, transient, rtol, atol)
    times = t_a + orbit.period * np.arange(n_points) / n_points
    clockwise = sol.sol(times).T
    points = np.vstack([clockwise[:1], clockwise[:0:-1]])
    curve = BoundaryCurve(points=points)
    logger.info(
        f"Reference cycle: period {orbit.period:.6f}, max |x1| {float(np.max(np.abs(points[:, 0]))):.6f}, "
        f"{n_points} points"
    )
    return curve


def _as_points(curve: Union[BoundaryCurve, np.ndarray]) -> np.ndarray:
    points = curve.points if isinstance(curve, BoundaryCurve) else np.asarray(curve, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2 or len(points) == 0:
        raise InputError(f"expected a non-empty D x 2 point array, got shape {points.shape}")
    return points


def _directed_distance(points: np.ndarray, polygon: np.ndarray) -> float:
    """max over points of the distance to the closed polyline."""
    starts = polygon
    ends = np.roll(polygon, -1, axis=0)
    seg = ends - starts
    seg_len2 = np.einsum('ij,ij->i', seg, seg)
    rel = points[:, None, :] - starts[None, :, :]
    with np.errstate(divide='ignore', invalid='ignore'):
        t = np.where(seg_len2 > 0, np.einsum('pij,ij->pi', rel, seg) / seg_len2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    nearest = starts[None, :, :] + t[:, :, None] * seg[None, :, :]
    dist = np.linalg.norm(points[:, None, :] - nearest, axis=2)
    return float(np.max(np.min(dist, axis=1)))


def hausdorff_distance(a: Union[BoundaryCurve, np.ndarray], b: Union[BoundaryCurve, np.ndarray]) -> float:
    """Symmetric Hausdorff distance between two closed polylines.

    Vertices of each curve are measured against the segments of the other.
    """
    pa, pb = _as_points(a), _as_points(b)
    return max(_directed_distance(pa, pb), _directed_distance(pb, pa))
