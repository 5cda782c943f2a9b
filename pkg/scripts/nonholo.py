"""
Generalized nonholonomic systems: a base system B(x) xdot = g(x) restricted to
M = {phi = 0}, with reaction forces in the span of a frame Delta.

The quotient bundle is never built. Everything is decided pointwise through
H = B^-1(span Delta), the D-matrix D = Dphi . Gamma and span residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from scripts import linalg
from scripts.common import (
    MANIFOLD_TOL, PROJECTION_MAX_ITER, PROJECTION_TOL,
    BaseNotRegularError, FrameDegenerateError, InconsistentError,
    NotOnManifoldError, ProjectionDivergenceError, ShapeError,
)
from scripts.expr import ExpressionField
from scripts.linsing import LinearlySingularSystem


@dataclass(frozen=True)
class SubmanifoldSpec:
    """M = {phi = 0} for a vector of a° constraint functions."""

    phi: ExpressionField

    @property
    def a(self) -> int:
        return self.phi.shape[0]

    def values(self, x) -> np.ndarray:
        if self.a == 0:
            return np.zeros(0)
        return np.asarray(self.phi.evaluate(x), dtype=float).reshape(self.a)

    def jacobian(self, x) -> np.ndarray:
        if self.a == 0:
            return np.zeros((0, self.phi.n))
        return self.phi.jacobian(x).reshape(self.a, self.phi.n)

    @cached_property
    def _with_jacobian(self) -> ExpressionField:
        return ExpressionField.vector(self.phi.entries + self.phi.derivative_field.entries, self.phi.variables)

    def values_and_jacobian(self, x):
        values = np.asarray(self._with_jacobian.evaluate(x), dtype=float)
        return values[:self.a], values[self.a:].reshape(self.a, self.phi.n)

    def violation(self, x) -> float:
        values = self.values(x)
        return float(np.max(np.abs(values))) if values.size else 0.0

    def require(self, x, tol=MANIFOLD_TOL):
        if tol == np.inf:
            return
        violation = self.violation(x)
        if violation > tol:
            raise NotOnManifoldError(violation)


@dataclass(frozen=True)
class ForceFrame:
    """Columns Delta_nu of a k x m° matrix field."""

    delta: ExpressionField

    @property
    def m(self) -> int:
        return self.delta.shape[1]

    def at(self, x) -> np.ndarray:
        k, m = self.delta.shape
        if m == 0:
            return np.zeros((k, 0))
        return np.asarray(self.delta.evaluate(x), dtype=float).reshape(k, m)


@dataclass(frozen=True)
class GeneralizedNonholonomicSystem:
    base: LinearlySingularSystem
    M: SubmanifoldSpec
    forces: ForceFrame
    manifold_tol: float = field(default=MANIFOLD_TOL, compare=False)

    def __post_init__(self):
        variables = tuple(self.base.variables)
        if tuple(self.M.phi.variables) != variables or tuple(self.forces.delta.variables) != variables:
            raise ShapeError("base system, constraints and force frame must share the variable list")
        if self.forces.delta.shape[0] != self.base.k:
            raise ShapeError(f"force frame has length {self.forces.delta.shape[0]}, fibre rank is {self.base.k}")

    @property
    def n(self):
        return self.base.n

    @cached_property
    def _stacked(self) -> ExpressionField:
        return ExpressionField.vector(
            self.base.A.entries + self.base.f.entries + self.forces.delta.entries
            + self.M.phi.derivative_field.entries, self.base.variables)

    def pointwise(self, x):
        """(B, g, Delta, Dphi) at x from one compiled evaluation."""
        k, n, m = self.base.k, self.n, self.forces.m
        values = np.asarray(self._stacked.evaluate(x), dtype=float)
        i, j, l = k * n, k * n + k, k * n + k + k * m
        return values[:i].reshape(k, n), values[i:j], values[j:l].reshape(k, m), values[l:].reshape(self.M.a, n)


def make_nonholonomic(base, phi: ExpressionField, delta: ExpressionField, manifold_tol=MANIFOLD_TOL):
    return GeneralizedNonholonomicSystem(base, SubmanifoldSpec(phi), ForceFrame(delta), manifold_tol)


@dataclass(frozen=True, eq=False)
class Classification:
    surjective: bool
    injective: bool
    regular: bool
    rank_D: int


@dataclass(frozen=True, eq=False)
class MultiplierSolution:
    u: np.ndarray
    gauge: bool  # D not injective: u is the minimum-norm choice
    residual: float


@dataclass(frozen=True, eq=False)
class ConstrainedSolution:
    X: np.ndarray
    u: np.ndarray
    gauge: bool
    Gamma: np.ndarray
    D: np.ndarray


@lru_cache(maxsize=64)
def _inverse_of(data: bytes, shape: tuple, policy: linalg.TolerancePolicy):
    """(rank, inverse or None) of a base matrix, memoised by value and tolerance policy."""
    b = np.frombuffer(data).reshape(shape)
    u, s, vt = linalg.svd(b)
    r = linalg.singular_rank(s, shape)
    if shape[0] != shape[1] or r < shape[1]:
        return r, None
    inverse = vt.T @ (u.T / s[:, None])
    inverse.setflags(write=False)
    return r, inverse


def _base_inverse(b, n, columns) -> np.ndarray:
    """B^-1 applied to the columns of a k x c matrix."""
    b = np.ascontiguousarray(b, dtype=float)
    r, inverse = _inverse_of(b.tobytes(), b.shape, linalg.tolerances())
    if inverse is None:
        raise BaseNotRegularError(f"base matrix has rank {r} < {n}; use the stacked solve with extra rows")
    return inverse @ columns


def _checked_frame(gamma) -> np.ndarray:
    r = _rank(gamma)
    if r < gamma.shape[1]:
        raise FrameDegenerateError(f"H frame has rank {r} < {gamma.shape[1]}")
    return gamma


def free_field_at(gnh: GeneralizedNonholonomicSystem, x) -> np.ndarray:
    """Y(x) = B(x)^-1 g(x) for a regular base."""
    return _base_inverse(gnh.base.A_at(x), gnh.n, gnh.base.f_at(x)[:, None])[:, 0]


def H_frame_at(gnh: GeneralizedNonholonomicSystem, x) -> np.ndarray:
    """Columns Gamma_mu = B(x)^-1 Delta_mu spanning H at x."""
    gnh.M.require(x, gnh.manifold_tol)
    return _checked_frame(_base_inverse(gnh.base.A_at(x), gnh.n, gnh.forces.at(x)))


def D_matrix_at(gnh: GeneralizedNonholonomicSystem, x) -> np.ndarray:
    return gnh.M.jacobian(x) @ H_frame_at(gnh, x)


def _rank(m, scale=0.0):
    return linalg.rank(m, scale) if m.size else 0


def _product_scale(jac, gamma):
    # floor for rank decisions on D, whose entries cancel to roundoff when Dphi kills H
    if jac.size == 0 or gamma.size == 0:
        return 0.0
    return linalg.norm2(jac) * linalg.norm2(gamma)


def classify_at(gnh: GeneralizedNonholonomicSystem, x) -> Classification:
    jac = gnh.M.jacobian(x)
    gamma = H_frame_at(gnh, x)
    d = jac @ gamma
    r = _rank(d, _product_scale(jac, gamma))
    a, m = d.shape
    surjective = r == a
    injective = r == m
    return Classification(surjective, injective, surjective and injective and a == m, r)


def _solve_multipliers(d, rhs, scale=0.0):
    a, m = d.shape
    if m == 0:
        residual = float(np.linalg.norm(rhs))
        if residual > MANIFOLD_TOL:
            raise InconsistentError("no reaction force can keep the motion on M", residual)
        return MultiplierSolution(np.zeros(0), False, residual)
    solution = linalg.solve_affine(d, rhs, scale)
    if not solution.consistent:
        raise InconsistentError(
            f"multiplier equation has no solution (rank D = {_rank(d, scale)} < {a})", solution.residual)
    return MultiplierSolution(solution.particular, solution.kernel.dim > 0, solution.residual)


def multipliers_at(gnh: GeneralizedNonholonomicSystem, x, Y_at) -> MultiplierSolution:
    """u with D u = -Dphi . Y (minimum norm, flagged, when D has a kernel)."""
    jac = gnh.M.jacobian(x)
    gamma = H_frame_at(gnh, x)
    rhs = -jac @ np.asarray(Y_at, dtype=float).ravel()
    return _solve_multipliers(jac @ gamma, rhs, _product_scale(jac, gamma))


def solve_constrained_at(gnh: GeneralizedNonholonomicSystem, x, Y_at=None) -> ConstrainedSolution:
    """Gamma, u and X at x; Y and Gamma share one solve with B when Y is not given."""
    gnh.M.require(x, gnh.manifold_tol)
    b, g, delta, jac = gnh.pointwise(x)
    if Y_at is None:
        solved = _base_inverse(b, gnh.n, np.column_stack([delta, g]))
        gamma, y = solved[:, :-1], solved[:, -1]
    else:
        gamma, y = _base_inverse(b, gnh.n, delta), np.asarray(Y_at, dtype=float).ravel()
    _checked_frame(gamma)
    d = jac @ gamma
    multipliers = _solve_multipliers(d, -jac @ y, _product_scale(jac, gamma))
    return ConstrainedSolution(y + gamma @ multipliers.u, multipliers.u, multipliers.gauge, gamma, d)


def constrained_field_at(gnh: GeneralizedNonholonomicSystem, x, Y_at=None) -> np.ndarray:
    """X = Y + Gamma u; Y defaults to the free field of the base system."""
    return solve_constrained_at(gnh, x, Y_at).X


def projectors_at(gnh: GeneralizedNonholonomicSystem, x):
    """(P, Q) for the splitting T_x N = T_x M + H_x."""
    gamma = H_frame_at(gnh, x)
    tangent = linalg.kernel_basis(gnh.M.jacobian(x))
    return linalg.complement_projectors(tangent, linalg.SubspaceBasis.of_columns(gamma))


def constraint_force_at(gnh: GeneralizedNonholonomicSystem, x, Y_at=None) -> np.ndarray:
    """Q.Y = Y - X, the H-component removed from the free dynamics."""
    if Y_at is None:
        Y_at = free_field_at(gnh, x)
    return np.asarray(Y_at, dtype=float).ravel() - constrained_field_at(gnh, x, Y_at)


def force_residual_at(gnh: GeneralizedNonholonomicSystem, x, X) -> float:
    """Distance of B(x) X - g(x) from span Delta(x)."""
    reaction = gnh.base.A_at(x) @ np.asarray(X, dtype=float).ravel() - gnh.base.f_at(x)
    return linalg.SubspaceBasis(gnh.base.k, gnh.forces.at(x)).residual(reaction)


def project_to_manifold(M: SubmanifoldSpec, x, free=None, tol=PROJECTION_TOL, max_iter=PROJECTION_MAX_ITER):
    """Gauss-Newton projection onto {phi = 0} with pseudo-inverse steps.

    `free` restricts the update to a subset of coordinate indices.
    """
    x = np.array(x, dtype=float).ravel()
    if M.a == 0:
        return x
    columns = np.arange(x.size) if free is None else np.asarray(sorted(free), dtype=int)
    for _ in range(max_iter + 1):
        values, jac = M.values_and_jacobian(x)
        if np.max(np.abs(values)) <= tol:
            return x
        x[columns] -= linalg.pinv(jac[:, columns]) @ values
        if not np.all(np.isfinite(x)):
            break
    values = M.values(x) if np.all(np.isfinite(x)) else np.array([np.inf])
    if np.max(np.abs(values)) <= tol:
        return x
    raise ProjectionDivergenceError(
        f"projection onto M did not converge (|phi|_inf = {np.max(np.abs(values)):.3e})")
