"""
Sampling-based verification of symmetries and constants of motion.

A candidate acts fibre-linearly: finite (phi, Phi) maps x -> phi(x) and
w -> Phi(x) w; infinitesimal (V, Lambda) is its generator. Checks report the
largest residual over the sample points.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from scripts import linalg
from scripts.common import (
    SYMMETRY_TOL, BaseNotRegularError, LssError, NotInvertibleError, ShapeError,
)
from scripts.expr import ONE, ZERO, Expr, ExpressionField, Var, add, const, mul, neg
from scripts.linsing import LinearlySingularSystem
from scripts.nonholo import (
    GeneralizedNonholonomicSystem, free_field_at, project_to_manifold, solve_constrained_at,
)
from utils.console import log_warning

# Lie-bracket check of a descended symmetry (central differences along V)
BRACKET_STEP = 1e-5
BRACKET_TOL = 1e-6


@dataclass(frozen=True)
class SymmetryCandidate:
    """kind 'finite': base = phi (n-vector), fibre = Phi (k x k).
    kind 'infinitesimal': base = V (n-vector), fibre = Lambda (k x k)."""

    kind: str
    base: ExpressionField
    fibre: ExpressionField

    def __post_init__(self):
        if self.kind not in ('finite', 'infinitesimal'):
            raise ShapeError(f"unknown candidate kind '{self.kind}'")
        n = len(self.base.variables)
        if self.base.shape != (n,):
            raise ShapeError(f"base part must be a vector of length {n}, got shape {self.base.shape}")
        if len(self.fibre.shape) != 2 or self.fibre.shape[0] != self.fibre.shape[1]:
            raise ShapeError(f"fibre part must be a square matrix, got shape {self.fibre.shape}")

    @property
    def finite(self) -> bool:
        return self.kind == 'finite'

    @classmethod
    def infinitesimal(cls, V: ExpressionField, Lambda: ExpressionField | None = None, lift='tangent'):
        """Lambda defaults to the tangent lift DV or the cotangent lift -DV^T."""
        if Lambda is None:
            Lambda = lifted_fibre_action(V, lift)
        return cls('infinitesimal', V, Lambda)

    @classmethod
    def finite_map(cls, phi: ExpressionField, Phi: ExpressionField | None = None):
        """Phi defaults to the Jacobian of phi."""
        if Phi is None:
            Phi = phi.derivative_field
        return cls('finite', phi, Phi)


def lifted_fibre_action(V: ExpressionField, lift='tangent') -> ExpressionField:
    n = V.shape[0]
    dv = V.derivative_field.rows()
    if lift == 'tangent':
        rows = [list(r) for r in dv]
    elif lift == 'cotangent':
        rows = [[neg(dv[j][i]) for j in range(n)] for i in range(n)]
    else:
        raise ShapeError(f"unknown lift '{lift}' (expected tangent or cotangent)")
    return ExpressionField.matrix(rows, V.variables)


def euler_flow(cand: SymmetryCandidate, eps: float) -> SymmetryCandidate:
    """Finite candidate (x + eps V, I + eps Lambda)."""
    if cand.finite:
        raise ShapeError("euler_flow needs an infinitesimal candidate")
    step = const(eps)
    variables = cand.base.variables
    base = ExpressionField.vector(
        [add(Var(name), mul(step, v)) for name, v in zip(variables, cand.base.entries)], variables)
    k = cand.fibre.shape[0]
    rows = [[add(ONE if i == j else ZERO, mul(step, cand.fibre.entry(i, j))) for j in range(k)]
            for i in range(k)]
    return SymmetryCandidate('finite', base, ExpressionField.matrix(rows, cand.fibre.variables))


@dataclass(frozen=True)
class SymmetryResidual:
    r_f: float
    r_A: float
    tol: float = SYMMETRY_TOL

    @property
    def passed(self) -> bool:
        return self.r_f <= self.tol and self.r_A <= self.tol


def _check_shapes(sys, cand):
    if tuple(cand.base.variables) != tuple(sys.variables):
        raise ShapeError("candidate and system use different variable lists")
    if cand.fibre.shape != (sys.k, sys.k):
        raise ShapeError(f"fibre part must be {sys.k} x {sys.k}, got {cand.fibre.shape}")


def check_symmetry(sys: LinearlySingularSystem, cand: SymmetryCandidate, points, tol=SYMMETRY_TOL):
    """r_f = max|f(phi(x)) - Phi(x) f(x)|, r_A = max|A(phi(x)) Dphi(x) - Phi(x) A(x)|."""
    if not cand.finite:
        raise ShapeError("check_symmetry needs a finite candidate")
    _check_shapes(sys, cand)
    r_f = r_a = 0.0
    for x in points:
        mapped = np.asarray(cand.base.evaluate(x), dtype=float)
        d_map = cand.base.jacobian(x)
        fibre = np.asarray(cand.fibre.evaluate(x), dtype=float)
        if linalg.rank(d_map) < sys.n:
            raise NotInvertibleError(f"base map is not a local diffeomorphism at {list(x)}")
        if linalg.rank(fibre) < sys.k:
            raise NotInvertibleError(f"fibre map is singular at {list(x)}")
        r_f = max(r_f, float(np.linalg.norm(sys.f_at(mapped) - fibre @ sys.f_at(x))))
        r_a = max(r_a, float(np.linalg.norm(sys.A_at(mapped) @ d_map - fibre @ sys.A_at(x))))
    return SymmetryResidual(r_f, r_a, tol)


def check_inf_symmetry(sys: LinearlySingularSystem, cand: SymmetryCandidate, points, tol=SYMMETRY_TOL):
    """r_f = max|Df V - Lambda f|, r_A = max|D_V A + A DV - Lambda A|."""
    if cand.finite:
        raise ShapeError("check_inf_symmetry needs an infinitesimal candidate")
    _check_shapes(sys, cand)
    r_f = r_a = 0.0
    for x in points:
        v = np.asarray(cand.base.evaluate(x), dtype=float)
        dv = cand.base.jacobian(x)
        lam = np.asarray(cand.fibre.evaluate(x), dtype=float)
        a = sys.A_at(x)
        f = sys.f_at(x)
        r_f = max(r_f, float(np.linalg.norm(sys.f.jacobian(x) @ v - lam @ f)))
        d_v_a = np.einsum('ilj,j->il', sys.A.jacobian(x), v)
        r_a = max(r_a, float(np.linalg.norm(d_v_a + a @ dv - lam @ a)))
    return SymmetryResidual(r_f, r_a, tol)


@dataclass(frozen=True)
class DescentResult:
    tangent_to_M: bool
    preserves_forces: bool
    descends: bool
    tangency_residual: float
    force_residual: float
    constrained_residual: float | None = None


def check_descent(gnh: GeneralizedNonholonomicSystem, cand: SymmetryCandidate, points_on_M,
                  tol=SYMMETRY_TOL) -> DescentResult:
    """Does the candidate descend to the constrained system?

    Tangency to M and invariance of span Delta under the fibre action; for an
    infinitesimal candidate that descends, the bracket with the constrained
    field is also measured.
    """
    if cand.fibre.shape != (gnh.base.k, gnh.base.k):
        raise ShapeError(f"fibre part must be {gnh.base.k} x {gnh.base.k}")
    tangency = forces = 0.0
    for x in points_on_M:
        delta = gnh.forces.at(x)
        fibre = np.asarray(cand.fibre.evaluate(x), dtype=float)
        if cand.finite:
            mapped = np.asarray(cand.base.evaluate(x), dtype=float)
            tangency = max(tangency, gnh.M.violation(mapped))
            moved = fibre @ delta
            target = gnh.forces.at(mapped)
        else:
            v = np.asarray(cand.base.evaluate(x), dtype=float)
            jac = gnh.M.jacobian(x)
            if jac.size:
                tangency = max(tangency, float(np.max(np.abs(jac @ v))))
            d_delta = gnh.forces.delta.jacobian(x).reshape(delta.shape + (gnh.n,))
            moved = fibre @ delta - np.einsum('kmj,j->km', d_delta, v)
            target = delta
        span = linalg.SubspaceBasis(gnh.base.k, target)
        for column in moved.T:
            forces = max(forces, span.residual(column))
    tangent = tangency <= tol
    preserves = forces <= tol
    bracket = None
    if tangent and preserves and not cand.finite:
        try:
            bracket = check_descended_symmetry(gnh, cand, points_on_M)
        except BaseNotRegularError:
            # no pointwise constrained field to bracket with
            bracket = None
    return DescentResult(tangent, preserves, tangent and preserves, tangency, forces, bracket)


def check_descended_symmetry(gnh: GeneralizedNonholonomicSystem, cand: SymmetryCandidate, points_on_M) -> float:
    """max |[V, X]| over the points, X the constrained field (DX.V by central differences)."""
    relaxed = dataclasses.replace(gnh, manifold_tol=math.inf)
    worst = 0.0
    for x in points_on_M:
        x = np.asarray(x, dtype=float)
        v = np.asarray(cand.base.evaluate(x), dtype=float)
        h = BRACKET_STEP / max(1.0, float(np.linalg.norm(v)))
        forward = solve_constrained_at(relaxed, x + h * v).X
        backward = solve_constrained_at(relaxed, x - h * v).X
        field = solve_constrained_at(relaxed, x).X
        bracket = (forward - backward) / (2 * h) - cand.base.jacobian(x) @ field
        worst = max(worst, float(np.linalg.norm(bracket)))
    return worst


@dataclass(frozen=True)
class ConstantDescent:
    base_conserved: bool
    Gamma_h: float
    constrained_conserved: bool
    base_residual: float
    constrained_residual: float
    coherent: bool


def check_constant_descent(gnh: GeneralizedNonholonomicSystem, h, points_on_M, Y_field=None,
                           tol=SYMMETRY_TOL) -> ConstantDescent:
    """Y.h, (Y - X).h and X.h over points of M.

    X.h = 0 exactly when Y.h = 0 and (Y - X).h = 0, for h a constant of the base.
    """
    if isinstance(h, Expr):
        h = ExpressionField.scalar(h, gnh.base.variables)
    base_worst = gamma_worst = constrained_worst = 0.0
    coherent = True
    for x in points_on_M:
        grad = h.jacobian(x)
        y = free_field_at(gnh, x) if Y_field is None else np.asarray(Y_field(x), dtype=float)
        X = solve_constrained_at(gnh, x, y).X
        yh = abs(float(grad @ y))
        zh = abs(float(grad @ (y - X)))
        xh = abs(float(grad @ X))
        if (xh <= tol) != (yh <= tol and zh <= tol) and yh <= tol:
            coherent = False
        base_worst = max(base_worst, yh)
        gamma_worst = max(gamma_worst, zh)
        constrained_worst = max(constrained_worst, xh)
    if not coherent:
        log_warning("constant-descent pattern is not pointwise coherent", tag="Symmetry")
    return ConstantDescent(base_worst <= tol, gamma_worst, constrained_worst <= tol,
                           base_worst, constrained_worst, coherent)


def sample_box(lower, upper, count, seed=2004) -> np.ndarray:
    """Scrambled Halton points in the box [lower, upper] (deterministic for a seed)."""
    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    if lower.shape != upper.shape or np.any(upper < lower):
        raise ShapeError("sample box bounds must have equal length with lower <= upper")
    sampler = qmc.Halton(d=lower.size, scramble=True, seed=seed)
    unit = sampler.random(count)
    return lower + unit * (upper - lower)


def sample_on_manifold(gnh: GeneralizedNonholonomicSystem, lower, upper, count, seed=2004, free=None):
    """Box samples projected onto M; points where projection or evaluation fails are skipped."""
    points = []
    for x in sample_box(lower, upper, count, seed):
        try:
            projected = project_to_manifold(gnh.M, x, free=free)
            gnh.base.f_at(projected)
        except (LssError, np.linalg.LinAlgError):
            continue
        points.append(projected)
    return points
