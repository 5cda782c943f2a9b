"""
Fixed-step RK4 integration of explicit fields with projection onto M after
every step, plus conservation monitors and CSV export.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from scripts.common import (
    MANIFOLD_TOL, PROJECTION_MAX_ITER, PROJECTION_TOL, ProjectionDivergenceError, ShapeError,
)
from scripts.expr import Expr, ExpressionField
from scripts.nonholo import (
    GeneralizedNonholonomicSystem, SubmanifoldSpec, free_field_at, project_to_manifold,
    solve_constrained_at,
)
from utils.console import log_warning

# Projection retry splits the failing step into this many substeps
RETRY_SUBSTEPS = 4


@dataclass(eq=False)
class Trajectory:
    t0: float
    dt: float
    states: np.ndarray  # (steps + 1) x n
    multipliers: np.ndarray  # (steps + 1) x m, empty columns when unconstrained
    drift: np.ndarray  # |phi|_inf per state, zeros when unconstrained
    monitors: dict = field(default_factory=dict)
    variables: tuple = ()

    @property
    def steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)


def constrained_field(gnh: GeneralizedNonholonomicSystem):
    """(field, multipliers) callbacks for X = Y + Gamma u.

    RK stages leave M by O(dt^2), so the callbacks skip the on-manifold check.
    """
    relaxed = dataclasses.replace(gnh, manifold_tol=math.inf)

    # multipliers are recorded at the same state the first RK stage evaluates
    @lru_cache(maxsize=1)
    def solve(state: bytes):
        return solve_constrained_at(relaxed, np.frombuffer(state))

    def field_at(x):
        return solve(np.asarray(x, dtype=float).ravel().tobytes()).X

    def multipliers_at(x):
        return solve(np.asarray(x, dtype=float).ravel().tobytes()).u

    return field_at, multipliers_at


def free_field(gnh: GeneralizedNonholonomicSystem):
    return lambda x: free_field_at(gnh, x)


def rk4_step(field_at: Callable, x: np.ndarray, h: float) -> np.ndarray:
    k1 = field_at(x)
    k2 = field_at(x + 0.5 * h * k1)
    k3 = field_at(x + 0.5 * h * k2)
    k4 = field_at(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(field_at: Callable, x0, t1: float, dt: float, project: SubmanifoldSpec | None = None,
              multipliers: Callable | None = None, t0: float = 0.0,
              projection_tol=PROJECTION_TOL, projection_max_iter=PROJECTION_MAX_ITER,
              manifold_tol=MANIFOLD_TOL, variables=()) -> Trajectory:
    """Classical RK4 on the uniform grid t0, t0 + dt, ..., projecting onto
    `project` after each step. Multipliers are recorded at step start."""
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if not t1 > t0:
        raise ValueError(f"end time {t1} must exceed start time {t0}")
    steps = int(round((t1 - t0) / dt))

    def to_manifold(point):
        return project_to_manifold(project, point, tol=projection_tol, max_iter=projection_max_iter)

    x = np.array(x0, dtype=float).ravel()
    if project is not None and project.violation(x) > manifold_tol:
        x = to_manifold(x)

    n = x.size
    m = 0 if multipliers is None else np.asarray(multipliers(x)).size
    states = np.empty((steps + 1, n))
    recorded = np.zeros((steps + 1, m))
    drift = np.zeros(steps + 1)

    for i in range(steps + 1):
        states[i] = x
        if m:
            recorded[i] = multipliers(x)
        if project is not None:
            drift[i] = project.violation(x)
        if i == steps:
            break
        candidate = rk4_step(field_at, x, dt)
        if candidate.shape != x.shape:
            raise ShapeError(f"field returned {candidate.shape}, state has shape {x.shape}")
        if project is None:
            x = candidate
            continue
        try:
            x = to_manifold(candidate)
        except ProjectionDivergenceError:
            log_warning(f"projection failed at step {i}, retrying with {RETRY_SUBSTEPS} substeps",
                        tag="Simulate")
            x = _retry(field_at, x, dt, to_manifold, i)
    return Trajectory(t0, dt, states, recorded, drift, variables=tuple(variables))


def _retry(field_at, x, dt, to_manifold, step):
    h = dt / RETRY_SUBSTEPS
    try:
        for _ in range(RETRY_SUBSTEPS):
            x = to_manifold(rk4_step(field_at, x, h))
    except ProjectionDivergenceError as e:
        raise ProjectionDivergenceError(f"projection diverged after retry: {e}", step=step) from None
    return x


@dataclass(frozen=True, eq=False)
class MonitorResult:
    max_abs_deviation: float
    series: np.ndarray


def monitor(traj: Trajectory, h, name=None) -> MonitorResult:
    """Deviation of h(x_t) from h(x_0) along the trajectory."""
    if isinstance(h, Expr):
        h = ExpressionField.scalar(h, traj.variables)
    series = np.array([h.evaluate(x) for x in traj.states], dtype=float)
    deviation = float(np.max(np.abs(series - series[0]))) if series.size else 0.0
    if name is not None:
        traj.monitors[name] = series
    return MonitorResult(deviation, series)


def write_csv(traj: Trajectory, target):
    """Columns t, x1..xn, u1..um, drift; %.17g; LF line endings."""
    n = traj.states.shape[1]
    m = traj.multipliers.shape[1]
    header = ",".join(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)] + ["drift"])
    data = np.column_stack([traj.times, traj.states, traj.multipliers, traj.drift])
    np.savetxt(target, data, fmt="%.17g", delimiter=",", header=header, comments="", newline="\n")
