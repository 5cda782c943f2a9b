"""
Lagrangian mechanics on TQ in natural coordinates (q, v).

From L(q, v) this builds the linearly singular system (omega_L^, dE_L),
Chetaev constraint-force frames (dphi/dv, 0) and the nonholonomic system of a
velocity constraint. Singular lagrangians are solved with the SODE condition
imposed as extra rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from scripts import linalg
from scripts.common import (
    MANIFOLD_TOL, InconsistentError, MaxRankViolatedError, NonUniqueError, ShapeError,
)
from scripts.expr import ZERO, Expr, ExpressionField, Var, add, mul, neg, sub
from scripts.linsing import LinearlySingularSystem, make_system, solve_at
from scripts.nonholo import GeneralizedNonholonomicSystem, make_nonholonomic
from utils.console import log_warning


@dataclass(frozen=True)
class LagrangianModel:
    """L(q, v) over the chart (q1..qn, v1..vn); state variables are q followed by v."""

    q: tuple
    v: tuple
    L: Expr

    def __post_init__(self):
        if len(self.q) != len(self.v):
            raise ShapeError(f"{len(self.q)} positions but {len(self.v)} velocities")
        missing = self.L.free_vars() - set(self.variables)
        if missing:
            raise ShapeError(f"lagrangian uses undeclared variables {sorted(missing)}")

    @property
    def nq(self) -> int:
        return len(self.q)

    @property
    def variables(self) -> tuple:
        return tuple(self.q) + tuple(self.v)

    @cached_property
    def momenta(self) -> tuple:
        """p_i = dL/dv_i."""
        return tuple(self.L.diff(name) for name in self.v)

    @cached_property
    def momentum_field(self) -> ExpressionField:
        return ExpressionField.vector(self.momenta, self.variables)

    @cached_property
    def position_gradient(self) -> ExpressionField:
        """dL/dq."""
        return ExpressionField.vector([self.L.diff(name) for name in self.q], self.variables)

    @cached_property
    def theta(self) -> ExpressionField:
        """theta_L = p_i dq^i as a covector on TQ."""
        return ExpressionField.vector(self.momenta + (ZERO,) * self.nq, self.variables)

    @cached_property
    def hessian(self) -> ExpressionField:
        """W_ij = d2L / dv_i dv_j."""
        return ExpressionField.matrix([[p.diff(name) for name in self.v] for p in self.momenta],
                                      self.variables)

    @cached_property
    def energy(self) -> Expr:
        """E_L = v^i p_i - L."""
        liouville = ZERO
        for name, p in zip(self.v, self.momenta):
            liouville = add(liouville, mul(Var(name), p))
        return sub(liouville, self.L)

    @cached_property
    def omega(self) -> ExpressionField:
        """Matrix of omega_L^: column j is i_{e_j} omega_L, so omega(x) X = i_X omega_L.

        With a_ij = dp_i/dq^j and W = d2L/dvdv it reads [[a^T - a, -W], [W, 0]];
        the lower triangle is the negated upper one, so antisymmetry is exact.
        """
        n = self.nq
        size = 2 * n
        entries = [[ZERO] * size for _ in range(size)]
        a = [[p.diff(name) for name in self.q] for p in self.momenta]
        w = [[p.diff(name) for name in self.v] for p in self.momenta]
        for k in range(n):
            for j in range(k + 1, n):
                entries[k][j] = sub(a[j][k], a[k][j])
            for j in range(n):
                entries[k][n + j] = neg(w[k][j])
        for row in range(size):
            for col in range(row):
                entries[row][col] = neg(entries[col][row])
        return ExpressionField.matrix(entries, self.variables)

    @cached_property
    def system(self) -> LinearlySingularSystem:
        d_energy = ExpressionField.vector([self.energy.diff(name) for name in self.variables], self.variables)
        return make_system(self.omega, d_energy)

    def split(self, x):
        x = np.asarray(x, dtype=float).ravel()
        return x[:self.nq], x[self.nq:]


def build_lagrangian_system(model: LagrangianModel) -> LinearlySingularSystem:
    return model.system


@dataclass(frozen=True)
class Regularity:
    regular: bool
    hessian_rank: int
    omega_rank: int

    @property
    def agree(self) -> bool:
        return self.omega_rank == 2 * self.hessian_rank


def regularity_of_L(model: LagrangianModel, points) -> list:
    """Rank of d2L/dvdv against rank of omega_L^ at each point."""
    out = []
    for x in points:
        h = linalg.rank(model.hessian.evaluate(x))
        o = linalg.rank(model.system.A_at(x))
        out.append(Regularity(h == model.nq and o == 2 * model.nq, h, o))
    return out


@dataclass(frozen=True)
class VelocityConstraintSpec:
    phi: ExpressionField

    @property
    def a(self) -> int:
        return self.phi.shape[0]

    def velocity_jacobian(self, model: LagrangianModel, x) -> np.ndarray:
        full = self.phi.jacobian(x).reshape(self.a, 2 * model.nq)
        return full[:, model.nq:]


def chetaev_frame(model: LagrangianModel, phi: VelocityConstraintSpec, points=()) -> ExpressionField:
    """Frame Delta^i = (dphi^i/dv, 0) of covectors on TQ (columns of a 2nq x a field)."""
    columns = []
    for expr in phi.phi.entries:
        columns.append([expr.diff(name) for name in model.v] + [ZERO] * model.nq)
        if all(e == ZERO for e in columns[-1]) and not points:
            raise MaxRankViolatedError("constraint does not depend on the velocities", ())
    rows = [[columns[c][r] for c in range(len(columns))] for r in range(2 * model.nq)]
    frame = ExpressionField(model.variables, (2 * model.nq, len(columns)),
                            tuple(e for row in rows for e in row))
    for x in points:
        dv = phi.velocity_jacobian(model, x)
        if dv.size and linalg.rank(dv) < phi.a:
            raise MaxRankViolatedError(f"dphi/dv has rank {linalg.rank(dv)} < {phi.a}", x)
    return frame


def nonholonomic_lagrangian(model: LagrangianModel, phi: VelocityConstraintSpec, forces=None,
                            points=(), manifold_tol=MANIFOLD_TOL) -> GeneralizedNonholonomicSystem:
    """Base (omega_L^, dE_L), M = {phi = 0}, Chetaev forces unless a frame is given."""
    if forces is None:
        forces = chetaev_frame(model, phi, points)
    return make_nonholonomic(model.system, phi.phi, forces, manifold_tol)


def metric_multiplier(u):
    """Chetaev multipliers of phi = g(v, v) - c^2 in the theta_g normalisation (Delta = 2 theta_g)."""
    return 2.0 * np.asarray(u, dtype=float)


def euler_lagrange_residual(model: LagrangianModel, phi: VelocityConstraintSpec, x, X, u) -> np.ndarray:
    """dL/dq - d/dt(dL/dv) - u_i dphi^i/dv along the field X."""
    x = np.asarray(x, dtype=float).ravel()
    dl_dq = model.position_gradient.evaluate(x)
    p_dot = model.momentum_field.jacobian(x) @ np.asarray(X, dtype=float).ravel()
    reaction = phi.velocity_jacobian(model, x).T @ np.asarray(u, dtype=float).ravel() if phi.a else 0.0
    return dl_dq - p_dot - reaction


@dataclass(frozen=True, eq=False)
class SodeSolution:
    X: np.ndarray
    solution: linalg.AffineSolutionSet

    @property
    def unique(self) -> bool:
        return self.solution.unique


def sode_solve_at(model: LagrangianModel, phi: VelocityConstraintSpec, x, strict=False,
                  manifold_tol=MANIFOLD_TOL) -> SodeSolution:
    """Second-order field tangent to M with omega_L^(X) - dE_L in span Delta.

    Rows: the base equations modulo the Chetaev frame, tangency dphi.X = 0 and
    the SODE rows X_q = v.
    """
    x = np.asarray(x, dtype=float).ravel()
    gnh = nonholonomic_lagrangian(model, phi, manifold_tol=manifold_tol)
    gnh.M.require(x, manifold_tol)
    n = model.nq
    _, v = model.split(x)
    sode = np.hstack([np.eye(n), np.zeros((n, n))])
    rows = np.vstack([gnh.M.jacobian(x), sode])
    rhs = np.concatenate([np.zeros(gnh.M.a), v])
    solution = solve_at(model.system, x, extra_rows=(rows, rhs), quotient=gnh.forces.at(x))
    if not solution.consistent:
        raise InconsistentError("no second-order field through this point", solution.residual)
    if not solution.unique:
        message = f"second-order solutions form a {solution.kernel.dim}-dimensional family"
        if strict:
            error = NonUniqueError(message)
            error.solution = solution
            raise error
        log_warning(message, tag="Lagrangian")
    return SodeSolution(solution.particular, solution)
