"""Boundary module for roaflow - evolves a closed planar curve toward the ROA boundary.

Each curve point z moves along its outward normal n(z) with speed
gamma - tanh(E(z)); gamma = 1 is the plain flow, gamma < 1 the conservative
variant whose fixed points satisfy tanh(E) = gamma.
"""

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from config import (
    CSV_FLOAT_FORMAT, CURVE_POINTS, FLOW_MAX_ITERS, FLOW_STEP, HISTORY_EVERY, INIT_RADIUS,
    MIN_CURVE_POINTS, RESAMPLE_EVERY,
)
from energy import EnergyConfig, EnergyStatus, ResidualEnergy, resolve_a_ref, residual_energy
from errors import (
    CurveFoldedError, DegenerateSpacingError, EnergyEvaluationError, FlowError, InputError,
)
from evaluation_pool import EvaluationPool
from systems import VectorField

logger = logging.getLogger(__name__)

# Tangents shorter than this (relative to the mean edge) count as degenerate
DEGENERATE_SPACING = 1e-12


@dataclass(frozen=True)
class BoundaryCurve:
    """Closed counterclockwise polyline of D planar points."""

    points: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2:
            raise InputError(f"curve points must be a D x 2 array, got shape {points.shape}")
        if len(points) < MIN_CURVE_POINTS:
            raise InputError(f"a boundary curve needs at least {MIN_CURVE_POINTS} points, got {len(points)}")
        if not np.all(np.isfinite(points)):
            raise FlowError("curve has non-finite points")
        points.setflags(write=False)
        object.__setattr__(self, 'points', points)

    @property
    def closed(self) -> bool:
        return True

    def __len__(self) -> int:
        return len(self.points)

    def edges(self) -> np.ndarray:
        """Edge vectors p[i+1] - p[i], including the closing edge."""
        return np.roll(self.points, -1, axis=0) - self.points

    def signed_area(self) -> float:
        """Shoelace area; positive for counterclockwise curves."""
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def perimeter(self) -> float:
        return float(np.sum(np.linalg.norm(self.edges(), axis=1)))

    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)

    def is_simple(self) -> bool:
        return not _has_crossing(self.points)


def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - \
           (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])


def _on_segment(p, a, b, d):
    """Collinear point p (d == 0) lies within the bounding box of segment ab."""
    within = (np.minimum(a[..., 0], b[..., 0]) <= p[..., 0]) & (p[..., 0] <= np.maximum(a[..., 0], b[..., 0])) & \
             (np.minimum(a[..., 1], b[..., 1]) <= p[..., 1]) & (p[..., 1] <= np.maximum(a[..., 1], b[..., 1]))
    return (d == 0) & within


def _has_crossing(points: np.ndarray) -> bool:
    """True if any two non-adjacent edges of the closed polyline intersect."""
    d = len(points)
    p1 = points[:, None, :]
    p2 = np.roll(points, -1, axis=0)[:, None, :]
    q1 = points[None, :, :]
    q2 = np.roll(points, -1, axis=0)[None, :, :]

    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    hits = ((d1 * d2 < 0) & (d3 * d4 < 0)) | \
        _on_segment(p1, q1, q2, d1) | _on_segment(p2, q1, q2, d2) | \
        _on_segment(q1, p1, p2, d3) | _on_segment(q2, p1, p2, d4)

    i, j = np.triu_indices(d, k=2)
    non_adjacent = ~((i == 0) & (j == d - 1))
    return bool(np.any(hits[i[non_adjacent], j[non_adjacent]]))


def init_circle(radius: float = INIT_RADIUS, n_points: int = CURVE_POINTS) -> BoundaryCurve:
    """D equally spaced points on a circle, counterclockwise from angle 0."""
    if radius <= 0:
        raise InputError(f"initial radius must be positive, got {radius}")
    if n_points < MIN_CURVE_POINTS:
        raise InputError(f"a boundary curve needs at least {MIN_CURVE_POINTS} points, got {n_points}")
    angles = 2.0 * np.pi * np.arange(n_points) / n_points
    return BoundaryCurve(points=radius * np.column_stack([np.cos(angles), np.sin(angles)]))


def outward_normals(curve: BoundaryCurve) -> np.ndarray:
    """Unit outward normals from cyclic central-difference tangents.

    For a counterclockwise curve the tangent rotated by -90 degrees points outward.
    """
    points = curve.points
    tangents = np.roll(points, -1, axis=0) - np.roll(points, 1, axis=0)
    lengths = np.linalg.norm(tangents, axis=1)
    scale = max(float(np.mean(np.linalg.norm(curve.edges(), axis=1))), np.finfo(float).tiny)
    if np.any(lengths <= DEGENERATE_SPACING * scale):
        bad = np.flatnonzero(lengths <= DEGENERATE_SPACING * scale).tolist()
        raise DegenerateSpacingError(f"degenerate spacing at points {bad}")
    return np.column_stack([tangents[:, 1], -tangents[:, 0]]) / lengths[:, None]


def flow_speeds(energies: Sequence[ResidualEnergy], gamma: float) -> np.ndarray:
    """Normal speed gamma - tanh(E) at every point."""
    return np.array([gamma - e.squashed for e in energies], dtype=float)


@dataclass(frozen=True)
class FlowConfig:
    """Hyperparameters of the boundary flow."""

    gamma: float = 1.0
    step_size: float = FLOW_STEP
    max_iters: int = FLOW_MAX_ITERS
    conv_tol: Optional[float] = None
    n_points: int = CURVE_POINTS
    init_radius: float = INIT_RADIUS
    resample_every: int = RESAMPLE_EVERY
    history_every: int = HISTORY_EVERY
    # points whose step lands on an escaping start stay where they are
    hold_escaped: bool = False
    seed: int = 0
    energy: EnergyConfig = field(default_factory=EnergyConfig)

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise InputError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.step_size <= 0:
            raise InputError(f"step size must be positive, got {self.step_size}")
        if self.max_iters < 1:
            raise InputError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.n_points < MIN_CURVE_POINTS:
            raise InputError(f"need at least {MIN_CURVE_POINTS} curve points, got {self.n_points}")
        if self.init_radius <= 0:
            raise InputError(f"initial radius must be positive, got {self.init_radius}")
        if self.resample_every < 0 or self.history_every < 1:
            raise InputError("resample_every must be >= 0 and history_every >= 1")
        if self.conv_tol is None:
            object.__setattr__(self, 'conv_tol', 1e-4 * self.init_radius)
        if self.conv_tol <= 0:
            raise InputError(f"conv_tol must be positive, got {self.conv_tol}")


def flow_step(curve: BoundaryCurve, energies: Sequence[ResidualEnergy], cfg: FlowConfig) -> BoundaryCurve:
    """One explicit Euler step z <- z + step * (gamma - tanh E) n(z)."""
    if len(energies) != len(curve):
        raise InputError(f"{len(energies)} energies for {len(curve)} curve points")
    normals = outward_normals(curve)
    speeds = flow_speeds(energies, cfg.gamma)
    points = curve.points + cfg.step_size * speeds[:, None] * normals
    if not np.all(np.isfinite(points)):
        raise FlowError(f"non-finite point after flow step {curve.iteration}")
    return BoundaryCurve(points=points, iteration=curve.iteration + 1)


def resample_curve(curve: BoundaryCurve, n_points: Optional[int] = None) -> BoundaryCurve:
    """Redistribute points at uniform arclength along the polygon.

    Starts at point 0 and keeps the traversal direction.
    """
    n_points = n_points or len(curve)
    _check_valid(curve)

    closed = np.vstack([curve.points, curve.points[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    arclength = np.concatenate([[0.0], np.cumsum(seg)])
    total = arclength[-1]
    targets = total * np.arange(n_points) / n_points
    points = np.column_stack([
        np.interp(targets, arclength, closed[:, 0]),
        np.interp(targets, arclength, closed[:, 1]),
    ])
    resampled = BoundaryCurve(points=points, iteration=curve.iteration)
    _check_valid(resampled, 'after resampling')
    change = abs(resampled.perimeter() - total) / total
    logger.debug(f"Resampled {len(curve)} -> {n_points} points (perimeter change {change:.2e})")
    return resampled


def _check_valid(curve: BoundaryCurve, where: str = ''):
    """Raise CurveFoldedError unless the curve is simple and counterclockwise."""
    suffix = f" {where}" if where else ''
    if not curve.is_simple():
        raise CurveFoldedError(f"curve folded at iteration {curve.iteration}{suffix}")
    if curve.signed_area() <= 0:
        raise CurveFoldedError(
            f"curve lost counterclockwise orientation at iteration {curve.iteration}{suffix}"
        )


class FlowStatus(str, Enum):
    CONVERGED = 'converged'
    MAX_ITERS = 'max_iters'
    FOLDED = 'folded'


@dataclass(frozen=True)
class FlowSnapshot:
    """Curve state at one evaluated iteration."""

    iteration: int
    points: np.ndarray
    speeds: np.ndarray
    energies: List[ResidualEnergy]


@dataclass
class FlowResult:
    final: BoundaryCurve
    history: List[FlowSnapshot]
    status: FlowStatus
    iterations: int
    a_ref: Optional[np.ndarray] = None


EnergyFunction = Callable[[np.ndarray], ResidualEnergy]


def _collect_energies(results: list, points: np.ndarray, a_ref, horizon: float) -> List[ResidualEnergy]:
    """Replace failed evaluations with escaped/inf; refuse if none succeeded."""
    failures = [r for r in results if isinstance(r, BaseException)]
    if failures and len(failures) == len(results):
        raise EnergyEvaluationError(f"energy evaluation failed at all {len(results)} points: {failures[0]}")
    energies = []
    for p, r in zip(points, results):
        if isinstance(r, BaseException):
            logger.warning(f"Energy at {p} failed ({r}); treating the point as escaped")
            r = ResidualEnergy.infinite(EnergyStatus.ESCAPED, a_ref, horizon)
        energies.append(r)
    return energies


def hold_escaped_points(curve: BoundaryCurve, energies: Sequence[ResidualEnergy],
                        stepped: BoundaryCurve, stepped_energies: Sequence[ResidualEnergy]):
    """Move points that stepped onto an escaping start back to their previous position.

    Returns the merged curve, its energies and the boolean mask of held points.
    """
    held = np.array([
        new.status == EnergyStatus.ESCAPED and old.status != EnergyStatus.ESCAPED
        for old, new in zip(energies, stepped_energies)
    ], dtype=bool)
    if not held.any():
        return stepped, list(stepped_energies), held
    points = np.array(stepped.points)
    points[held] = curve.points[held]
    merged = [old if h else new for h, old, new in zip(held, energies, stepped_energies)]
    return BoundaryCurve(points=points, iteration=stepped.iteration), merged, held


def _count_escaped(energies: Sequence[ResidualEnergy]) -> int:
    return sum(1 for e in energies if e.status == EnergyStatus.ESCAPED)


async def run_flow(field: Optional[VectorField], cfg: FlowConfig, a_ref=None,
                   pool: Optional[EvaluationPool] = None,
                   energy_fn: Optional[EnergyFunction] = None,
                   initial: Optional[BoundaryCurve] = None) -> FlowResult:
    """Evolve the initial circle until the flow stalls, folds or runs out of iterations.

    Args:
        field: System whose ROA is estimated (ignored when energy_fn is given)
        cfg: Flow configuration
        a_ref: Reference Jacobian (default: resolved per cfg.energy.a_ref_source)
        pool: Worker pool for the per-point energy evaluations
        energy_fn: Override for the per-point energy (point -> ResidualEnergy)
        initial: Starting curve (default: circle of cfg.init_radius)

    Returns:
        FlowResult with the final curve, snapshots and status
    """
    own_pool = pool is None
    pool = pool or EvaluationPool()
    try:
        if energy_fn is None:
            if field is None:
                raise InputError("run_flow needs a vector field or an energy function")
            if a_ref is None:
                a_ref = resolve_a_ref(field, cfg.energy, seed=cfg.seed, pool=pool)
            a_ref = np.asarray(a_ref, dtype=float)
            ref = a_ref

            def energy_fn(point):
                return residual_energy(field, point, ref, cfg.energy)

        fallback_ref = a_ref if a_ref is not None else np.zeros((2, 2))

        async def evaluate(curve: BoundaryCurve, label: str) -> List[ResidualEnergy]:
            results = await pool.map(energy_fn, [p.copy() for p in curve.points], batch_id=label)
            return _collect_energies(results, curve.points, fallback_ref, cfg.energy.horizon)

        curve = initial or init_circle(cfg.init_radius, cfg.n_points)
        history: List[FlowSnapshot] = []
        status = FlowStatus.MAX_ITERS
        iterations = 0
        name = field.id if field is not None else 'custom energy'
        logger.info(
            f"Flow on {name}: gamma={cfg.gamma}, step={cfg.step_size}, D={len(curve)}, "
            f"max_iters={cfg.max_iters}, hold_escaped={cfg.hold_escaped}"
        )
        energies = await evaluate(curve, "flow iteration 0")

        for it in range(cfg.max_iters):
            speeds = flow_speeds(energies, cfg.gamma)

            if it % cfg.history_every == 0:
                history.append(FlowSnapshot(it, np.array(curve.points), speeds, energies))
                stalled = sum(1 for e in energies if e.status != EnergyStatus.OK)
                logger.info(
                    f"iter {it}: mean radius {float(np.mean(curve.radii())):.4f}, "
                    f"max |speed| {float(np.max(np.abs(speeds))):.4f}, non-ok points {stalled}"
                )

            try:
                stepped = flow_step(curve, energies, cfg)
            except DegenerateSpacingError as e:
                logger.warning(f"iter {it}: {e}; resampling")
                try:
                    curve = resample_curve(curve, cfg.n_points)
                except CurveFoldedError as fold:
                    logger.error(f"Flow aborted: {fold}")
                    status = FlowStatus.FOLDED
                    break
                energies = await evaluate(curve, f"flow iteration {it} resampled")
                continue

            iterations = it + 1
            stepped_energies = await evaluate(stepped, f"flow iteration {iterations}")
            if cfg.hold_escaped:
                stepped, stepped_energies, held = hold_escaped_points(
                    curve, energies, stepped, stepped_energies)
                if held.any():
                    logger.debug(f"iter {it}: held {int(held.sum())} points short of the escape set")
            displacement = float(np.max(np.linalg.norm(stepped.points - curve.points, axis=1)))

            if cfg.resample_every and iterations % cfg.resample_every == 0:
                try:
                    resampled = resample_curve(stepped, cfg.n_points)
                except CurveFoldedError as fold:
                    logger.error(
                        f"Flow aborted: {fold} (area {stepped.signed_area():.4g}, "
                        f"max speed {float(np.max(np.abs(speeds))):.4g}); keeping iteration {curve.iteration}"
                    )
                    status = FlowStatus.FOLDED
                    break
                resampled_energies = await evaluate(resampled, f"flow iteration {iterations} resampled")
                if cfg.hold_escaped and _count_escaped(resampled_energies) > _count_escaped(stepped_energies):
                    logger.debug(f"iter {it}: resampling would move points into the escape set; skipped")
                else:
                    stepped, stepped_energies = resampled, resampled_energies
            curve, energies = stepped, stepped_energies

            if displacement < cfg.conv_tol:
                status = FlowStatus.CONVERGED
                break

        logger.info(f"Flow finished: {status.value} after {iterations} iterations")
        return FlowResult(final=curve, history=history, status=status,
                          iterations=iterations, a_ref=a_ref)
    finally:
        if own_pool:
            pool.close()


def save_curve_csv(curve: BoundaryCurve, path) -> Path:
    """Write a curve as idx,x1,x2 rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['idx', 'x1', 'x2'])
        for i, (x1, x2) in enumerate(curve.points):
            writer.writerow([i, format(float(x1), CSV_FLOAT_FORMAT), format(float(x2), CSV_FLOAT_FORMAT)])
    return path


def load_curve_csv(path) -> BoundaryCurve:
    """Read a curve written by save_curve_csv."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"curve file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        rows = [r for r in csv.reader(f) if r and not r[0].startswith('#')]
    if not rows or [c.strip() for c in rows[0]] != ['idx', 'x1', 'x2']:
        raise InputError(f"{path}: expected header idx,x1,x2")
    try:
        points = [(float(r[1]), float(r[2])) for r in rows[1:]]
    except (IndexError, ValueError) as e:
        raise InputError(f"{path}: malformed curve row ({e})")
    return BoundaryCurve(points=np.array(points))


def save_history_csv(result: FlowResult, path) -> Path:
    """Write iter,idx,x1,x2,speed,E,status rows for every snapshot."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['iter', 'idx', 'x1', 'x2', 'speed', 'E', 'status'])
        for snap in result.history:
            for i, (p, speed, e) in enumerate(zip(snap.points, snap.speeds, snap.energies)):
                writer.writerow([
                    snap.iteration, i,
                    format(float(p[0]), CSV_FLOAT_FORMAT),
                    format(float(p[1]), CSV_FLOAT_FORMAT),
                    format(float(speed), CSV_FLOAT_FORMAT),
                    format(float(e.value), CSV_FLOAT_FORMAT),
                    e.status.value,
                ])
    logger.info(f"Wrote {len(result.history)} snapshots to {path}")
    return path
