"""
Command operations behind main.py: analyze, simulate and the symmetry /
constant checks. Each returns plain report documents; printing is left to
the caller.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field

import numpy as np

from scripts import linalg
from scripts.common import (
    MANIFOLD_TOL, PROJECTION_MAX_ITER, PROJECTION_TOL, SYMMETRY_TOL,
    BaseNotRegularError, DomainError, InconsistentError, LssError, NotComplementaryError,
    UsageError,
)
from scripts.dynamics import constrained_field, free_field, integrate, monitor, write_csv
from scripts.expr import ExpressionField
from scripts.lagrangian import VelocityConstraintSpec, regularity_of_L, sode_solve_at
from scripts.linsing import consistency_at, primary_constraint_values, solve_at
from scripts.nonholo import (
    D_matrix_at, H_frame_at, classify_at, force_residual_at, free_field_at, project_to_manifold, projectors_at,
    solve_constrained_at,
)
from scripts.spec_file import SpecFile
from scripts.symmetry import (
    BRACKET_TOL, check_constant_descent, check_descent, check_inf_symmetry, check_symmetry,
    euler_flow, sample_box, sample_on_manifold,
)
from utils.console import log_info, log_warning

FLOW_STEPS = (1e-2, 1e-3, 1e-4)


@dataclass
class RunConfig:
    """Numeric settings resolved from command line > settings file > defaults."""

    tol_rank: float = 1e-10
    tol_img: float | None = None
    manifold_tol: float = MANIFOLD_TOL
    projection_tol: float = PROJECTION_TOL
    projection_max_iter: int = PROJECTION_MAX_ITER
    symmetry_tol: float = SYMMETRY_TOL
    sample_count: int = 200
    sample_seed: int = 2004

    def header(self):
        return {
            'tol_rank': self.tol_rank,
            'tol_img': self.tol_img,
            'manifold_tol': self.manifold_tol,
            'symmetry_tol': self.symmetry_tol,
        }


@dataclass
class AnalysisReport:
    header: dict
    points: list = field(default_factory=list)

    def document(self):
        return {'analysis': self.header, 'points': self.points}


def lift_point(spec: SpecFile, assignments, config: RunConfig) -> np.ndarray:
    """Coordinates from key=value text, completed from [initial] and projected onto M."""
    values = {key: spec.value(text) for key, text in assignments.items()}
    x = spec.point(values)
    if spec.has_constraints():
        gnh = spec.nonholonomic(config.manifold_tol)
        if gnh.M.violation(x) > config.manifold_tol:
            x = project_to_manifold(gnh.M, x, free=spec.free_indices(values),
                                    tol=config.projection_tol, max_iter=config.projection_max_iter)
    return x


def _singular_field(spec, gnh, x):
    """Constrained field for a singular base: stacked solve with tangency (and SODE rows)."""
    if spec.model is not None:
        sode = sode_solve_at(spec.model, VelocityConstraintSpec(gnh.M.phi), x, manifold_tol=gnh.manifold_tol)
        return sode.X, sode.solution
    solution = solve_at(gnh.base, x, extra_rows=(gnh.M.jacobian(x), np.zeros(gnh.M.a)),
                        quotient=gnh.forces.at(x))
    if not solution.consistent:
        raise InconsistentError("no field tangent to M through this point", solution.residual)
    return solution.particular, solution


def analyze_point(spec: SpecFile, x, config: RunConfig) -> dict:
    base = spec.system
    consistency = consistency_at(base, x)
    entry = {
        'point': dict(zip(spec.variables, x.tolist())),
        'base': {
            'rank_A': linalg.rank(base.A_at(x)),
            'consistent': consistency.consistent,
            'residual': consistency.residual,
            'primary_constraints': primary_constraint_values(base, x),
        },
    }
    if spec.model is not None:
        regularity = regularity_of_L(spec.model, [x])[0]
        entry['lagrangian'] = {
            'regular': regularity.regular,
            'hessian_rank': regularity.hessian_rank,
            'omega_rank': regularity.omega_rank,
        }
    if not spec.has_constraints():
        solution = solve_at(base, x)
        entry['field'] = {'X': solution.particular, 'kernel_dim': solution.kernel.dim,
                          'consistent': solution.consistent}
        return entry

    gnh = spec.nonholonomic(config.manifold_tol)
    nh = {'violation': gnh.M.violation(x)}
    entry['nonholonomic'] = nh
    try:
        gamma = H_frame_at(gnh, x)
    except BaseNotRegularError:
        nh['path'] = 'singular-base'
        try:
            X, solution = _singular_field(spec, gnh, x)
        except InconsistentError as e:
            nh['consistent'] = False
            nh['residual'] = e.residual
            return entry
        nh['consistent'] = True
        nh['X'] = X
        nh['unique'] = solution.unique
        nh['kernel_dim'] = solution.kernel.dim
        nh['residual'] = solution.residual
        nh['tangency'] = float(np.max(np.abs(gnh.M.jacobian(x) @ X)))
        return entry

    classification = classify_at(gnh, x)
    jac = gnh.M.jacobian(x)
    subspaces = linalg.subspace_classify(linalg.SubspaceBasis(gnh.n, jac.T), linalg.SubspaceBasis.of_columns(gamma))
    nh.update({
        'path': 'regular-base',
        'Gamma': gamma,
        'D': D_matrix_at(gnh, x),
        'rank_D': classification.rank_D,
        'surjective': classification.surjective,
        'injective': classification.injective,
        'regular': classification.regular,
        'subspace_test_agrees': (subspaces.sum_full, subspaces.intersection_zero, subspaces.direct_sum) ==
                                (classification.surjective, classification.injective, classification.regular),
    })
    y = free_field_at(gnh, x)
    try:
        solution = solve_constrained_at(gnh, x, y)
    except InconsistentError as e:
        nh['consistent'] = False
        nh['residual'] = e.residual
        return entry
    if solution.gauge:
        log_warning(f"multipliers are not unique at {x.tolist()}; minimum-norm choice reported", tag="Analyze")
    nh.update({
        'consistent': True,
        'Y': y,
        'multipliers': solution.u,
        'multiplier_gauge': solution.gauge,
        'X': solution.X,
        'tangency': float(np.max(np.abs(jac @ solution.X))),
        'force_residual': force_residual_at(gnh, x, solution.X),
    })
    if classification.regular:
        try:
            p, q = projectors_at(gnh, x)
        except NotComplementaryError as e:
            nh['projector_error'] = str(e)
        else:
            nh['projector'] = {
                'P': p,
                'field_residual': float(np.linalg.norm(p @ y - solution.X)),
                'idempotence': float(np.linalg.norm(p @ p - p)),
                'complement': float(np.linalg.norm(p @ q)),
            }
    return entry


def cmd_analyze(spec: SpecFile, points, config: RunConfig) -> AnalysisReport:
    """`points`: list of key=value dicts (text values); empty means the [initial] point."""
    header = {
        'scenario': spec.name,
        'kind': spec.kind,
        'variables': list(spec.variables),
        'constraints': list(spec.constraint_names),
        'tolerances': config.header(),
    }
    report = AnalysisReport(header)
    for assignments in points or [{}]:
        x = lift_point(spec, assignments, config)
        report.points.append(analyze_point(spec, x, config))
    return report


@dataclass
class SimulationSummary:
    steps: int
    max_drift: float
    monitors: dict

    def document(self):
        return {'steps': self.steps, 'max_drift': self.max_drift, 'monitors': self.monitors}


def cmd_simulate(spec: SpecFile, x0, t1, dt, out, config: RunConfig, extra_monitors=()):
    """Integrate from x0 (key=value text), write the CSV, return (status, trajectory, summary)."""
    if not (isinstance(dt, (int, float)) and dt > 0):
        raise UsageError(f"--dt must be positive, got {dt}")
    if not t1 > 0:
        raise UsageError(f"--t1 must be positive, got {t1}")
    x = lift_point(spec, x0, config)
    gnh = spec.nonholonomic(config.manifold_tol)
    multipliers = None
    project = None
    if spec.has_constraints():
        project = gnh.M
        try:
            H_frame_at(gnh, x)
            field_at, multipliers = constrained_field(gnh)
        except BaseNotRegularError:
            log_info("singular base: integrating the stacked second-order solution", tag="Simulate")
            relaxed = spec.nonholonomic(math.inf)
            field_at = lambda point: _singular_field(spec, relaxed, point)[0]
    else:
        try:
            free_field_at(gnh, x)
            field_at = free_field(gnh)
        except BaseNotRegularError:
            field_at = lambda point: solve_at(spec.system, point).particular

    traj = integrate(field_at, x, t1, dt, project=project, multipliers=multipliers,
                     projection_tol=config.projection_tol, projection_max_iter=config.projection_max_iter,
                     manifold_tol=config.manifold_tol, variables=spec.variables)
    deviations = {}
    for name, expr in list(spec.constants.items()) + list(extra_monitors):
        deviations[name] = monitor(traj, ExpressionField.scalar(expr, spec.variables), name).max_abs_deviation
    if out is None:
        write_csv(traj, sys.stdout)
    else:
        with open(out, 'w', encoding='utf-8', newline='\n') as f:
            write_csv(traj, f)
    summary = SimulationSummary(traj.steps, float(np.max(traj.drift)), deviations)
    return 0, traj, summary


def _admissible(spec: SpecFile, points):
    """Sample points where the system evaluates (drops e.g. non-timelike points)."""
    kept = []
    for x in points:
        try:
            spec.system.A_at(x)
            spec.system.f_at(x)
        except DomainError:
            continue
        kept.append(x)
    return kept


def _flow_slope(spec, cand, points, tol):
    residuals = []
    for eps in FLOW_STEPS:
        r = check_symmetry(spec.system, euler_flow(cand, eps), points, tol)
        residuals.append(max(r.r_f, r.r_A))
    slope = None
    if all(r > 1e-300 for r in residuals):
        slope = float(np.polyfit(np.log(FLOW_STEPS), np.log(residuals), 1)[0])
    return residuals, slope


def cmd_check(spec: SpecFile, what, config: RunConfig, names=None, expressions=()):
    """Symmetry or constant-of-motion check over the [box] sample; returns (status, document)."""
    lower, upper = spec.bounds()
    document = {
        'scenario': spec.name,
        'check': what,
        'samples': config.sample_count,
        'seed': config.sample_seed,
        'tolerances': config.header(),
    }
    gnh = spec.nonholonomic(config.manifold_tol) if spec.has_constraints() else None
    on_m = []
    if gnh is not None:
        on_m = sample_on_manifold(gnh, lower, upper, config.sample_count, config.sample_seed,
                                  free=spec.free_indices())
        on_m = _admissible(spec, on_m)
        document['points_on_M'] = len(on_m)

    if what == 'symmetry':
        cand = spec.symmetry
        if cand is None:
            raise UsageError(f"{spec.name} has no [symmetry] section")
        points = _admissible(spec, sample_box(lower, upper, config.sample_count, config.sample_seed))
        document['points'] = len(points)
        if cand.finite:
            residual = check_symmetry(spec.system, cand, points, config.symmetry_tol)
        else:
            residual = check_inf_symmetry(spec.system, cand, points, config.symmetry_tol)
            flow, slope = _flow_slope(spec, cand, points, config.symmetry_tol)
            document['flow_residuals'] = flow
            document['flow_slope'] = slope
        document['base'] = {'r_f': residual.r_f, 'r_A': residual.r_A, 'symmetry': residual.passed}
        passed = residual.passed
        if gnh is not None:
            descent = check_descent(gnh, cand, on_m, config.symmetry_tol)
            document['descent'] = {
                'tangent_to_M': descent.tangent_to_M,
                'preserves_forces': descent.preserves_forces,
                'descends': descent.descends,
                'tangency_residual': descent.tangency_residual,
                'force_residual': descent.force_residual,
                'constrained_residual': descent.constrained_residual,
            }
            bracket_ok = descent.constrained_residual is None or descent.constrained_residual <= BRACKET_TOL
            passed = passed and descent.descends and bracket_ok
        document['passed'] = passed
        return (0 if passed else 1), document

    if what != 'constant':
        raise UsageError(f"unknown check '{what}'")
    candidates = dict(spec.constants)
    for name, expr in expressions:
        candidates[name] = expr
    if names:
        missing = [name for name in names if name not in candidates]
        if missing:
            raise UsageError(f"no constant named '{missing[0]}' (known: {', '.join(sorted(candidates))})")
        candidates = {name: candidates[name] for name in names}
    if not candidates:
        raise UsageError(f"{spec.name} has no [constant] section and no --expr was given")
    results = {}
    passed = True
    for name, expr in candidates.items():
        field_h = ExpressionField.scalar(expr, spec.variables)
        if gnh is None:
            points = _admissible(spec, sample_box(lower, upper, config.sample_count, config.sample_seed))
            worst = 0.0
            for x in points:
                y = solve_at(spec.system, x).particular
                worst = max(worst, abs(float(field_h.jacobian(x) @ y)))
            results[name] = {'expression': str(expr), 'base_residual': worst,
                             'base_conserved': worst <= config.symmetry_tol}
            passed = passed and worst <= config.symmetry_tol
            continue
        try:
            result = check_constant_descent(gnh, field_h, on_m, tol=config.symmetry_tol)
        except BaseNotRegularError as e:
            raise LssError(f"constant check needs a regular base system: {e}") from e
        results[name] = {
            'expression': str(expr),
            'base_conserved': result.base_conserved,
            'base_residual': result.base_residual,
            'Gamma_h': result.Gamma_h,
            'constrained_conserved': result.constrained_conserved,
            'constrained_residual': result.constrained_residual,
            'coherent': result.coherent,
        }
        passed = passed and result.constrained_conserved
    document['constants'] = results
    document['passed'] = passed
    return (0 if passed else 1), document
