"""
Linearly singular systems A(x) xdot = f(x): consistency, primary constraints,
the pointwise constraint algorithm and stacked solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scripts.common import MANIFOLD_TOL, ShapeError, UndeclaredVariableError
from scripts.expr import ExpressionField
from scripts import linalg
from utils.console import log_warning

# Differentials of constraints beyond level 0 are taken by central differences
# with this relative step; the constraint values they produce are tested at
# FD_LEVEL_TOL instead of the manifold tolerance.
FD_RELATIVE_STEP = 1e-4
FD_LEVEL_TOL = 1e-6


@dataclass(frozen=True)
class LinearlySingularSystem:
    A: ExpressionField
    f: ExpressionField

    @property
    def variables(self):
        return self.A.variables

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def k(self) -> int:
        return self.A.shape[0]

    def A_at(self, x) -> np.ndarray:
        return np.asarray(self.A.evaluate(x), dtype=float).reshape(self.k, self.n)

    def f_at(self, x) -> np.ndarray:
        return np.asarray(self.f.evaluate(x), dtype=float).reshape(self.k)

    def is_explicit(self) -> bool:
        """True when A is the identity matrix symbolically."""
        identity = ExpressionField.identity(self.variables)
        return self.A.shape == identity.shape and all(
            str(a) == str(b) for a, b in zip(self.A.entries, identity.entries))


def make_system(A: ExpressionField | None, f: ExpressionField) -> LinearlySingularSystem:
    """Validated system; A defaults to the identity (explicit equation xdot = f)."""
    if len(f.shape) != 1:
        raise ShapeError(f"f must be a vector field, got shape {f.shape}")
    if A is None:
        A = ExpressionField.identity(f.variables)
    if len(A.shape) != 2:
        raise ShapeError(f"A must be a matrix field, got shape {A.shape}")
    if tuple(A.variables) != tuple(f.variables):
        stray = set(A.variables) ^ set(f.variables)
        if stray:
            raise UndeclaredVariableError(sorted(stray)[0])
        raise ShapeError("A and f list their variables in different orders")
    k, n = A.shape
    if n != len(A.variables):
        raise ShapeError(f"A has {n} columns but the chart has {len(A.variables)} coordinates")
    if f.shape[0] != k:
        raise ShapeError(f"A has {k} rows but f has {f.shape[0]} entries")
    return LinearlySingularSystem(A, f)


@dataclass(frozen=True)
class Consistency:
    consistent: bool
    residual: float


def consistency_at(sys: LinearlySingularSystem, x) -> Consistency:
    solution = linalg.solve_affine(sys.A_at(x), sys.f_at(x))
    return Consistency(solution.consistent, solution.residual)


def primary_constraint_values(sys: LinearlySingularSystem, x) -> np.ndarray:
    """<w, f(x)> for w running over the deterministic cokernel basis of A(x)."""
    w = linalg.cokernel_basis(sys.A_at(x)).vectors
    return w.T @ sys.f_at(x)


def solve_at(sys: LinearlySingularSystem, x, extra_rows=None, quotient=None) -> linalg.AffineSolutionSet:
    """Solution set of [A(x); C] v = [f(x); d].

    `quotient` is an optional k x m frame; when given, the rows A(x) v = f(x)
    are only imposed modulo its span (projected onto the annihilator).
    """
    a = sys.A_at(x)
    b = sys.f_at(x)
    if quotient is not None:
        frame = np.asarray(quotient, dtype=float).reshape(sys.k, -1)
        w = linalg.annihilator_basis(linalg.SubspaceBasis.of_columns(frame)).vectors
        a = w.T @ a
        b = w.T @ b
    if extra_rows is not None:
        c, d = extra_rows
        c = linalg.as_matrix(c)
        d = np.asarray(d, dtype=float).ravel()
        if c.size and c.shape[1] != sys.n:
            raise ShapeError(f"extra rows have {c.shape[1]} columns, expected {sys.n}")
        if c.shape[0] != d.size:
            raise ShapeError("extra rows and right-hand side differ in length")
        if c.size:
            a = np.vstack([a, c])
            b = np.concatenate([b, d])
    return linalg.solve_affine(a, b)


# ---------------------------------------------------------------------------
# Constraint algorithm
# ---------------------------------------------------------------------------

def _left_projector(s: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the left null space of s."""
    if s.shape[0] == 0:
        return np.zeros((0, 0))
    return np.eye(s.shape[0]) - s @ linalg.pinv(s)


@dataclass(frozen=True, eq=False)
class ConstraintRecord:
    level: int
    index: int
    direction: np.ndarray  # cokernel direction (stacked-row space) at the seed
    value: float


@dataclass(eq=False)
class ConstraintStack:
    """Constraints generated from one seed, with their gauge fixed at that seed."""

    system: LinearlySingularSystem
    seed: np.ndarray
    records: list = field(default_factory=list)
    _directions: list = field(default_factory=list, repr=False)

    @property
    def levels(self) -> int:
        return len(self._directions)

    def __len__(self):
        return len(self.records)

    def _stacked(self, x, level):
        """(S_level(x), b_level(x)): A, f plus the tangency rows of all lower levels."""
        s = self.system.A_at(x)
        b = self.system.f_at(x)
        for lower in range(level):
            rows = self._rows(x, lower)
            s = np.vstack([s, rows])
            b = np.concatenate([b, np.zeros(rows.shape[0])])
        return s, b

    def level_values(self, x, level) -> np.ndarray:
        directions = self._directions[level]
        if directions.shape[1] == 0:
            return np.zeros(0)
        s, b = self._stacked(x, level)
        return directions.T @ (_left_projector(s) @ b)

    def _rows(self, x, level) -> np.ndarray:
        """Differentials of the level's constraints at x (one row per constraint)."""
        directions = self._directions[level]
        n = self.system.n
        if directions.shape[1] == 0:
            return np.zeros((0, n))
        x = np.asarray(x, dtype=float)
        if level == 0:
            a = self.system.A_at(x)
            f = self.system.f_at(x)
            x0 = linalg.pinv(a) @ f
            df = self.system.f.jacobian(x)
            da = self.system.A.jacobian(x)
            return directions.T @ _left_projector(a) @ (df - np.einsum('ilj,l->ij', da, x0))
        rows = np.empty((directions.shape[1], n))
        for j in range(n):
            h = FD_RELATIVE_STEP * max(1.0, abs(x[j]))
            forward = x.copy()
            backward = x.copy()
            forward[j] += h
            backward[j] -= h
            rows[:, j] = (self.level_values(forward, level) - self.level_values(backward, level)) / (2 * h)
        return rows

    def values(self, x) -> np.ndarray:
        """All constraint values at x, level by level."""
        parts = [self.level_values(x, level) for level in range(self.levels)]
        return np.concatenate(parts) if parts else np.zeros(0)


@dataclass(eq=False)
class ConstraintAlgorithmResult:
    stacks: list
    labels: list  # first failing level per seed, or "survives"
    ranks: list  # per seed: rank of the stacked matrix at each level reached
    converged: bool
    warnings: list

    @property
    def surviving(self):
        return [i for i, label in enumerate(self.labels) if label == "survives"]


def _run_seed(sys, seed, max_levels, tol):
    stack = ConstraintStack(sys, np.asarray(seed, dtype=float).ravel())
    x = stack.seed
    old_coker = np.zeros((sys.k, 0))
    ranks = []
    for level in range(max_levels + 1):
        s, b = stack._stacked(x, level)
        ranks.append(linalg.rank(s))
        coker = linalg.cokernel_basis(s).vectors
        padded_old = np.vstack([old_coker, np.zeros((s.shape[0] - old_coker.shape[0], old_coker.shape[1]))])
        if padded_old.shape[1]:
            # new directions: the part of coker(S_level) orthogonal to the old cokernel
            residue = coker - padded_old @ (padded_old.T @ coker)
            new = linalg.column_space(residue, 1.0) if residue.size else residue
        else:
            new = coker
        if new.shape[1] == 0:
            return stack, "survives", ranks, True
        stack._directions.append(new)
        values = stack.level_values(x, level)
        for i, value in enumerate(values):
            stack.records.append(ConstraintRecord(level, len(stack.records), new[:, i].copy(), float(value)))
        limit = tol if level == 0 else max(tol, FD_LEVEL_TOL)
        if np.max(np.abs(values)) > limit * (1.0 + np.linalg.norm(b)):
            return stack, level, ranks, True
        if level == max_levels:
            return stack, "survives", ranks, False
        old_coker = np.hstack([padded_old, new])
    return stack, "survives", ranks, False


def constraint_algorithm_sample(sys: LinearlySingularSystem, seeds, max_levels=5,
                                tol=MANIFOLD_TOL) -> ConstraintAlgorithmResult:
    """Run the constraint recursion at every seed.

    Level 0 constraints are the primary ones; level l+1 adds the tangency rows
    of level l to the stacked system and collects the cokernel directions that
    appear. A seed is labelled with the first level whose new constraints do
    not vanish there. The run has converged when every surviving seed reached
    a level without new constraints.
    """
    stacks, labels, ranks = [], [], []
    converged = True
    for seed in seeds:
        stack, label, seed_ranks, seed_converged = _run_seed(sys, seed, max_levels, tol)
        stacks.append(stack)
        labels.append(label)
        ranks.append(seed_ranks)
        if label == "survives" and not seed_converged:
            converged = False

    warnings = []
    depth = max((len(r) for r in ranks), default=0)
    for level in range(depth):
        seen = {r[level] for r, label in zip(ranks, labels)
                if len(r) > level and (label == "survives" or label >= level)}
        if len(seen) > 1:
            warnings.append(f"rank of the stacked system varies across seeds at level {level}: {sorted(seen)}")
    if not converged:
        warnings.append(f"constraint algorithm did not stabilize within {max_levels} levels")
    for message in warnings:
        log_warning(message, tag="Constraint")
    return ConstraintAlgorithmResult(stacks, labels, ranks, converged, warnings)
