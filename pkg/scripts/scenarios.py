"""
Built-in scenario registry and the per-scenario self tests run by
`main.py --self-test`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from scripts import linalg
from scripts.commands import RunConfig, cmd_check
from scripts.common import LssError, UsageError, scenarios_dir
from scripts.dynamics import constrained_field, integrate, monitor
from scripts.expr import ExpressionField
from scripts.lagrangian import VelocityConstraintSpec, metric_multiplier, sode_solve_at
from scripts.linsing import consistency_at
from scripts.nonholo import D_matrix_at, classify_at, projectors_at, solve_constrained_at
from scripts.spec_file import SpecFile, load
from scripts.symmetry import BRACKET_TOL, check_descent, sample_box, sample_on_manifold


@dataclass(frozen=True)
class Scenario:
    name: str
    filename: str
    description: str
    self_test: Callable | None = None

    @property
    def path(self):
        return os.path.join(scenarios_dir(), self.filename)

    def load(self, overrides=None) -> SpecFile:
        return load(self.path, overrides)


@dataclass(frozen=True)
class CheckOutcome:
    scenario: str
    name: str
    passed: bool
    detail: str


def _outcome(scenario, name, error, tol):
    return CheckOutcome(scenario, name, bool(error <= tol), f"max error {error:.3e} (tol {tol:g})")


def _flag(scenario, name, passed, detail=""):
    return CheckOutcome(scenario, name, bool(passed), detail)


def _timelike(spec: SpecFile, points, margin=0.1):
    gvv = ExpressionField.scalar(spec.expression('gvv'), spec.variables)
    return [x for x in points if float(gvv.evaluate(x)) > margin]


#
# Self tests
#

def _example1(config: RunConfig):
    name = 'example1'
    spec = SCENARIOS[name].load()
    gnh = spec.nonholonomic(config.manifold_tol)
    a = spec.value('a')
    k = spec.value('k')
    points = [np.array([x, a]) for x in np.linspace(-1.0, 1.0, 20)]

    field_error = d_error = projector_error = 0.0
    regular = True
    for x in points:
        c = classify_at(gnh, x)
        regular = regular and c.regular
        d_error = max(d_error, float(np.max(np.abs(D_matrix_at(gnh, x) - 1.0))))
        X = solve_constrained_at(gnh, x).X
        field_error = max(field_error, float(np.max(np.abs(X - [1.0 - a * x[0], 0.0]))))
        p, _ = projectors_at(gnh, x)
        projector_error = max(projector_error, float(np.max(np.abs(p @ [0.0, 1.0] - [-x[0], 0.0]))))
    out = [
        _flag(name, 'regular at every point', regular),
        _outcome(name, 'D = [1]', d_error, 1e-12),
        _outcome(name, 'X = (1 - a x, 0)', field_error, 1e-12),
        _outcome(name, 'P maps d/dy to -x d/dx', projector_error, 1e-12),
    ]

    descent = check_descent(gnh, spec.symmetry, points, config.symmetry_tol)
    out.append(_flag(name, 'symmetry descends', descent.descends,
                     f"tangency {descent.tangency_residual:.3e}, forces {descent.force_residual:.3e}"))
    out.append(_outcome(name, 'descended symmetry commutes with X', descent.constrained_residual, BRACKET_TOL))
    restricted = max(float(np.max(np.abs(spec.symmetry.base.evaluate(x) - [k * (1.0 - a * x[0]), 0.0])))
                     for x in points)
    out.append(_outcome(name, 'symmetry restricts to k (1 - a x) d/dx', restricted, 1e-8))
    return out


def _rosenberg(config: RunConfig):
    name = 'rosenberg'
    spec = SCENARIOS[name].load()
    gnh = spec.nonholonomic(config.manifold_tol)
    lower, upper = spec.bounds()
    points = sample_on_manifold(gnh, lower, upper, 100, config.sample_seed, free=spec.free_indices())

    field_error = multiplier_error = 0.0
    for p in points:
        _, y, _, xd, yd, _ = p
        solution = solve_constrained_at(gnh, p)
        w = 1.0 + y * y
        expected = np.array([xd, yd, y * xd, -y * yd * xd / w, 0.0, yd * xd / w])
        field_error = max(field_error, float(np.max(np.abs(solution.X - expected))))
        multiplier_error = max(multiplier_error, abs(float(solution.u[0]) + xd * yd / w))
    out = [
        _flag(name, 'points on M', len(points) == 100, f"{len(points)} of 100"),
        _outcome(name, 'closed-form constrained field', field_error, 1e-9),
        _outcome(name, 'closed-form multiplier', multiplier_error, 1e-9),
    ]

    field_at, multipliers = constrained_field(gnh)
    traj = integrate(field_at, spec.point(), 10.0, 1e-3, project=gnh.M, multipliers=multipliers,
                     projection_tol=config.projection_tol, projection_max_iter=config.projection_max_iter,
                     manifold_tol=config.manifold_tol, variables=spec.variables)
    for constant, expr in spec.constants.items():
        out.append(_outcome(name, f"'{constant}' conserved along the flow",
                            monitor(traj, expr, constant).max_abs_deviation, 1e-6))
    out.append(_outcome(name, 'constraint drift', float(np.max(traj.drift)), 1e-8))
    return out


def _relparticle_L2(config: RunConfig):
    name = 'relparticle-L2'
    spec = SCENARIOS[name].load({'U': 'k*q1', 'k': '1'})
    gnh = spec.nonholonomic(config.manifold_tol)
    lower, upper = spec.bounds()
    points = sample_on_manifold(gnh, lower, upper, 50, config.sample_seed, free=spec.free_indices())
    # theta_g multiplier is -(k/c^2) v1 with c = 1
    error = 0.0
    for x in points:
        u = solve_constrained_at(gnh, x).u
        error = max(error, abs(float(metric_multiplier(u)[0]) + x[4]))
    out = [_outcome(name, 'multiplier equals -(1/c^2) dU(T)', error, 1e-9)]

    free = SCENARIOS[name].load()
    gnh = free.nonholonomic(config.manifold_tol)
    field_at, multipliers = constrained_field(gnh)
    traj = integrate(field_at, free.point(), 5.0, 1e-3, project=gnh.M, multipliers=multipliers,
                     projection_tol=config.projection_tol, projection_max_iter=config.projection_max_iter,
                     manifold_tol=config.manifold_tol, variables=free.variables)
    start = traj.states[0]
    line = np.concatenate([start[:4] + 5.0 * start[4:], start[4:]])
    out.append(_outcome(name, 'free motion is a straight line', float(np.max(np.abs(traj.states[-1] - line))), 1e-8))
    out.append(_outcome(name, 'g(v, v) preserved', monitor(traj, free.constants['norm']).max_abs_deviation, 1e-8))
    return out


def _relparticle_L1(config: RunConfig):
    name = 'relparticle-L1'
    spec = SCENARIOS[name].load()
    lower, upper = spec.bounds()
    box = _timelike(spec, sample_box(lower, upper, 80, config.sample_seed))[:50]
    ranks = {linalg.rank(spec.system.A_at(x)) for x in box}
    out = [_flag(name, 'omega has rank 6 of 8', ranks == {6}, f"ranks seen {sorted(ranks)}")]

    forced = SCENARIOS[name].load({'U': 'k*q1', 'k': '1'})
    inconsistent = [not consistency_at(forced.system, x).consistent for x in box]
    out.append(_flag(name, 'inconsistent when dU(T) != 0', all(inconsistent),
                     f"{sum(inconsistent)} of {len(inconsistent)} points"))

    regular = SCENARIOS['relparticle-L2'].load()
    gnh2 = regular.nonholonomic(config.manifold_tol)
    on_m = sample_on_manifold(spec.nonholonomic(config.manifold_tol), lower, upper, 50, config.sample_seed,
                              free=spec.free_indices())
    phi = VelocityConstraintSpec(spec.constraints)
    error = 0.0
    unique = True
    for x in on_m:
        sode = sode_solve_at(spec.model, phi, x, manifold_tol=config.manifold_tol)
        unique = unique and sode.unique
        error = max(error, float(np.max(np.abs(sode.X - solve_constrained_at(gnh2, x).X))))
    out.append(_flag(name, 'second-order field is unique', unique))
    out.append(_outcome(name, 'same dynamics as the regular lagrangian', error, 1e-8))
    return out


def _symmetry_check(name, config: RunConfig):
    spec = SCENARIOS[name].load()
    status, document = cmd_check(spec, 'symmetry', config)
    return [_flag(name, 'declared symmetry passes check-symmetry', status == 0,
                  f"base r_f {document['base']['r_f']:.3e}, r_A {document['base']['r_A']:.3e}")]


SCENARIOS = {
    'example1': Scenario('example1', 'example1.lss',
                         'Y = d/dx + y d/dy on the line y = a, forces along x d/dx + d/dy', _example1),
    'rosenberg': Scenario('rosenberg', 'rosenberg.lss',
                          "free particle in R^3 with z' = y x'", _rosenberg),
    'relparticle-L1': Scenario('relparticle-L1', 'relparticle-L1.lss',
                               'relativistic particle, singular lagrangian -m c sqrt(g(v, v))', _relparticle_L1),
    'relparticle-L2': Scenario('relparticle-L2', 'relparticle-L2.lss',
                               'relativistic particle, regular lagrangian -m g(v, v)/2', _relparticle_L2),
}


def get(name) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise UsageError(f"unknown scenario '{name}' (known: {', '.join(sorted(SCENARIOS))})") from None


def run_self_test(config: RunConfig, names=None):
    """Every check of the selected scenarios (all by default); a scenario that errors counts as failed."""
    outcomes = []
    for name in names or sorted(SCENARIOS):
        scenario = get(name)
        try:
            scenario.load()
            outcomes.append(_flag(name, 'scenario file parses', True))
            if scenario.self_test is not None:
                outcomes.extend(scenario.self_test(config))
            outcomes.extend(_symmetry_check(name, config))
        except LssError as e:
            outcomes.append(_flag(name, 'self test raised', False, str(e)))
    return outcomes
