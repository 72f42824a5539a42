"""Integrator module for roaflow - produces, reconstructs and persists trajectories."""

import csv
import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.integrate import DOP853, RK45

from config import (
    ATOL, CONVERGENCE_RADIUS, CSV_FLOAT_FORMAT, ESCAPE_RADIUS,
    INTEGRATION_METHOD, RTOL, SAMPLE_INTERVAL,
)
from errors import DimensionMismatchError, InputError, IntegrationError, TrajectoryFormatError
from systems import VectorField

logger = logging.getLogger(__name__)

SOLVERS = {
    'RK45': RK45,
    'DOP853': DOP853,
}

# Relative tolerance used when deciding whether sample spacing is uniform
GRID_RTOL = 1e-9


class Termination(str, Enum):
    HORIZON_REACHED = 'horizon_reached'
    CONVERGED_TO_ORIGIN = 'converged_to_origin'
    ESCAPED = 'escaped'


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped samples of one solution s(t, x0)."""

    times: np.ndarray
    states: np.ndarray
    derivatives: Optional[np.ndarray] = None
    termination: Termination = Termination.HORIZON_REACHED
    step_underflow: bool = False

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(-1, 1)
        if times.ndim != 1 or len(times) == 0:
            raise TrajectoryFormatError("trajectory needs at least one sample")
        if len(states) != len(times):
            raise TrajectoryFormatError(
                f"{len(times)} timestamps but {len(states)} states"
            )
        if np.any(np.diff(times) <= 0):
            raise TrajectoryFormatError("non-increasing times")
        derivatives = self.derivatives
        if derivatives is not None:
            derivatives = np.asarray(derivatives, dtype=float)
            if derivatives.ndim == 1:
                derivatives = derivatives.reshape(-1, 1)
            if derivatives.shape != states.shape:
                raise TrajectoryFormatError(
                    f"derivatives shape {derivatives.shape} does not match states {states.shape}"
                )
            derivatives.setflags(write=False)
        times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'states', states)
        object.__setattr__(self, 'derivatives', derivatives)
        object.__setattr__(self, 'termination', Termination(self.termination))

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    @property
    def span(self) -> float:
        return float(self.times[-1] - self.times[0])

    def __len__(self) -> int:
        return len(self.times)

    def spacing(self) -> Optional[float]:
        """Grid spacing if samples are uniformly spaced, else None."""
        if len(self.times) < 2:
            return None
        steps = np.diff(self.times)
        dt = float(np.mean(steps))
        if np.allclose(steps, dt, rtol=GRID_RTOL, atol=0.0):
            return dt
        return None

    def truncated(self, horizon: float) -> 'Trajectory':
        """Samples with t <= t0 + horizon (derivatives kept)."""
        keep = self.times <= self.times[0] + horizon * (1.0 + GRID_RTOL)
        derivs = None if self.derivatives is None else self.derivatives[keep]
        return replace(self, times=self.times[keep], states=self.states[keep], derivatives=derivs)


def integrate(field: VectorField, x0, horizon: float, dt: float = SAMPLE_INTERVAL,
              rtol: float = RTOL, atol: float = ATOL,
              conv_radius: float = CONVERGENCE_RADIUS,
              escape_radius: float = ESCAPE_RADIUS,
              method: str = INTEGRATION_METHOD) -> Trajectory:
    """Integrate x' = f(x) from x0 and sample the solution on a uniform grid.

    The adaptive solver steps freely; after every accepted step its dense
    output is evaluated at the grid times it covered. Each grid sample (k >= 1)
    is tested against the stopping sets ||s|| < conv_radius and
    ||s|| > escape_radius; every solver state is tested against the escape set.

    Args:
        field: Vector field to integrate
        x0: Initial state
        horizon: Final time (rounded to a whole number of grid steps)
        dt: Grid spacing of the returned samples
        rtol: Relative tolerance of the embedded pair
        atol: Absolute tolerance of the embedded pair
        conv_radius: Radius of the convergence set around the origin
        escape_radius: Radius beyond which the trajectory counts as escaped
        method: 'RK45' (Dormand-Prince 5(4)) or 'DOP853'

    Returns:
        Trajectory with derivatives f(s) filled at every sample
    """
    x0 = np.asarray(x0, dtype=float).copy()
    if x0.shape != (field.dimension,):
        raise DimensionMismatchError(
            f"x0 has shape {x0.shape}, system '{field.id}' has dimension {field.dimension}"
        )
    if not np.all(np.isfinite(x0)):
        raise IntegrationError(f"non-finite initial state {x0}")
    if horizon <= 0 or dt <= 0:
        raise InputError(f"horizon and dt must be positive (horizon={horizon}, dt={dt})")
    if method not in SOLVERS:
        raise InputError(f"unknown integration method '{method}' (use {', '.join(SOLVERS)})")

    n_grid = max(1, int(round(horizon / dt)))
    grid = np.arange(n_grid + 1) * dt

    times: List[float] = [0.0]
    states: List[np.ndarray] = [x0]
    termination = Termination.HORIZON_REACHED
    step_underflow = False

    solver = SOLVERS[method](field.rhs, 0.0, x0, float(grid[-1]), rtol=rtol, atol=atol)
    k = 1
    done = False
    while not done and solver.status == 'running':
        solver.step()
        if solver.status == 'failed':
            # Step size underflow: the solution is blowing up faster than the solver can follow
            termination = Termination.ESCAPED
            step_underflow = True
            logger.debug(f"{field.id}: solver failed at t={solver.t:.6g} ({solver.message})")
            break
        if not np.all(np.isfinite(solver.y)):
            raise IntegrationError(f"non-finite state at t={solver.t:.6g} integrating {field.id}")

        dense = solver.dense_output()
        while k <= n_grid and grid[k] <= solver.t:
            x = np.asarray(dense(grid[k]), dtype=float)
            times.append(float(grid[k]))
            states.append(x)
            k += 1
            norm = np.linalg.norm(x)
            if norm < conv_radius:
                termination = Termination.CONVERGED_TO_ORIGIN
                done = True
                break
            if norm > escape_radius:
                termination = Termination.ESCAPED
                done = True
                break

        if not done and np.linalg.norm(solver.y) > escape_radius:
            if solver.t > times[-1]:
                times.append(float(solver.t))
                states.append(np.array(solver.y, dtype=float))
            termination = Termination.ESCAPED
            done = True

    states_arr = np.array(states)
    derivatives = np.array([field.eval(s) for s in states_arr])
    logger.debug(
        f"{field.id}: x0={x0} -> {termination.value} after {len(times)} samples (t={times[-1]:.4g})"
    )
    return Trajectory(
        times=np.array(times),
        states=states_arr,
        derivatives=derivatives,
        termination=termination,
        step_underflow=step_underflow,
    )


def derivatives_from_samples(traj: Trajectory) -> Trajectory:
    """Reconstruct state derivatives from uniformly spaced samples.

    Central differences at interior samples, second-order one-sided
    differences at both ends; states are left untouched.
    """
    if len(traj) < 3:
        raise TrajectoryFormatError(f"need at least 3 samples to differentiate, got {len(traj)}")
    dt = traj.spacing()
    if dt is None:
        raise TrajectoryFormatError("non-uniform spacing; cannot reconstruct derivatives")
    derivatives = np.gradient(np.asarray(traj.states), dt, axis=0, edge_order=2)
    return replace(traj, derivatives=derivatives)


def _format(value: float) -> str:
    return format(float(value), CSV_FLOAT_FORMAT)


def save_trajectory(traj: Trajectory, path) -> Path:
    """Write a trajectory as CSV: t,x1..xn[,dx1..dxn]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = traj.dimension
    header = ['t'] + [f"x{i + 1}" for i in range(n)]
    if traj.derivatives is not None:
        header += [f"dx{i + 1}" for i in range(n)]

    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(f"# termination={traj.termination.value}\n")
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for i, t in enumerate(traj.times):
            row = [_format(t)] + [_format(v) for v in traj.states[i]]
            if traj.derivatives is not None:
                row += [_format(v) for v in traj.derivatives[i]]
            writer.writerow(row)

    logger.debug(f"Saved trajectory with {len(traj)} samples to {path}")
    return path


def _parse_header(header: List[str]) -> tuple[int, bool]:
    """Validate a CSV header and return (dimension, has_derivatives)."""
    names = [h.strip() for h in header]
    if not names or names[0] != 't':
        raise TrajectoryFormatError(f"malformed header: first column must be 't', got {names[:1]}")
    states = [h for h in names[1:] if h.startswith('x')]
    n = len(states)
    if n == 0 or states != [f"x{i + 1}" for i in range(n)]:
        raise TrajectoryFormatError(f"malformed header: expected x1..xn after t, got {names[1:]}")
    rest = names[1 + n:]
    if not rest:
        return n, False
    if rest != [f"dx{i + 1}" for i in range(n)]:
        raise TrajectoryFormatError(f"malformed header: expected dx1..dx{n}, got {rest}")
    return n, True


def load_trajectory(path) -> Trajectory:
    """Read a trajectory CSV written by save_trajectory (or by hand).

    Lines starting with '#' are ignored; a `# termination=<value>` comment
    restores the termination label.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"trajectory file not found: {path}")

    termination = Termination.HORIZON_REACHED
    rows: List[List[str]] = []
    header: Optional[List[str]] = None
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith('#'):
                comment = stripped.lstrip('#').strip()
                if comment.startswith('termination='):
                    try:
                        termination = Termination(comment.split('=', 1)[1].strip())
                    except ValueError:
                        logger.warning(f"{path}:{line_no}: unknown termination label ignored")
                continue
            cells = next(csv.reader([stripped]))
            if header is None:
                header = cells
                continue
            rows.append(cells)

    if header is None:
        raise TrajectoryFormatError(f"malformed header: {path} is empty")
    n, has_derivatives = _parse_header(header)
    width = 1 + n * (2 if has_derivatives else 1)

    data = np.empty((len(rows), width))
    for i, cells in enumerate(rows):
        if len(cells) != width:
            raise TrajectoryFormatError(
                f"ragged rows: row {i + 1} has {len(cells)} columns, expected {width}"
            )
        try:
            data[i] = [float(c) for c in cells]
        except ValueError as e:
            raise TrajectoryFormatError(f"row {i + 1}: {e}")

    if len(data) == 0:
        raise TrajectoryFormatError(f"{path} has a header but no samples")
    return Trajectory(
        times=data[:, 0],
        states=data[:, 1:1 + n],
        derivatives=data[:, 1 + n:] if has_derivatives else None,
        termination=termination,
    )
