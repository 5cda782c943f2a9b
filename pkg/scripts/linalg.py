"""
Pointwise linear algebra on small dense matrices.

Every rank decision goes through the singular values and one process-wide
TolerancePolicy, so classifications are reproducible across commands.
Inconsistent linear systems are reported through AffineSolutionSet.residual,
never raised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scripts.common import NotComplementaryError, ShapeError


@dataclass(frozen=True)
class TolerancePolicy:
    """tol_rank = max(rows, cols) * sigma_ref * rank_factor
    tol_img  = max(rows, cols) * sigma_ref * image_factor * (1 + |b|)
    (image_factor defaults to rank_factor). sigma_ref is sigma_max, or the
    scale of the factors when a product of matrices is being tested."""

    rank_factor: float = 1e-10
    image_factor: float | None = None

    def rank_tol(self, singular_values, shape, scale=0.0) -> float:
        return max(shape, default=0) * _reference(singular_values, scale) * self.rank_factor

    def image_tol(self, singular_values, shape, b_norm, scale=0.0) -> float:
        factor = self.rank_factor if self.image_factor is None else self.image_factor
        return max(shape, default=0) * _reference(singular_values, scale) * factor * (1.0 + b_norm)


def _reference(singular_values, scale):
    top = float(singular_values[0]) if singular_values.size else 0.0
    return max(top, float(scale))


_policy = TolerancePolicy()


def configure_tolerances(rank_factor=1e-10, image_factor=None):
    """Install the process-wide tolerance policy (done once by the CLI)."""
    global _policy
    _policy = TolerancePolicy(float(rank_factor), None if image_factor is None else float(image_factor))
    return _policy


def tolerances() -> TolerancePolicy:
    return _policy


def as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m.reshape(1, -1) if m.size else m.reshape(0, 0)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {m.shape}")
    return m


def svd(m):
    """Full SVD that also accepts empty matrices."""
    m = as_matrix(m)
    rows, cols = m.shape
    if rows == 0 or cols == 0:
        return np.eye(rows), np.zeros(0), np.eye(cols)
    return np.linalg.svd(m, full_matrices=True)


def _numeric_rank(s, shape, policy, scale=0.0):
    tol = policy.rank_tol(s, shape, scale)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol))


def singular_rank(s, shape, scale=0.0) -> int:
    """Rank decided from precomputed singular values of a matrix of `shape`."""
    return _numeric_rank(np.asarray(s, dtype=float), shape, _policy, scale)


def norm2(m) -> float:
    """Largest singular value (0 for an empty matrix)."""
    m = as_matrix(m)
    if m.size == 0:
        return 0.0
    if min(m.shape) == 1:
        return float(np.linalg.norm(m))
    return float(np.linalg.norm(m, 2))


def fix_signs(columns: np.ndarray) -> np.ndarray:
    """Deterministic sign gauge: first non-negligible component of each column positive."""
    out = np.array(columns, dtype=float, copy=True)
    for j in range(out.shape[1] if out.ndim == 2 else 0):
        col = out[:, j]
        scale = np.max(np.abs(col)) if col.size else 0.0
        for value in col:
            if abs(value) > 1e-12 * scale:
                if value < 0:
                    out[:, j] = -col
                break
    return out


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """Subspace of R^ambient spanned by the columns of `vectors` (ambient x dim)."""

    ambient: int
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=float).reshape(self.ambient, -1)
        object.__setattr__(self, 'vectors', vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def span(cls, *vectors, ambient=None):
        if not vectors:
            if ambient is None:
                raise ShapeError("empty span needs an ambient dimension")
            return cls(ambient, np.zeros((ambient, 0)))
        cols = np.column_stack([np.asarray(v, dtype=float).ravel() for v in vectors])
        return cls(cols.shape[0], cols)

    @classmethod
    def of_columns(cls, m):
        m = np.asarray(m, dtype=float)
        if m.ndim == 1:
            m = m.reshape(-1, 1)
        return cls(m.shape[0], m)

    def residual(self, v) -> float:
        """Distance of v from the subspace."""
        v = np.asarray(v, dtype=float).ravel()
        if self.dim == 0:
            return float(np.linalg.norm(v))
        return solve_affine(self.vectors, v).residual

    def __repr__(self):
        return f"SubspaceBasis(ambient={self.ambient}, dim={self.dim})"


@dataclass(frozen=True, eq=False)
class AffineSolutionSet:
    """Solutions particular + span(kernel) of Mat.v = b (least squares when inconsistent)."""

    particular: np.ndarray
    kernel: SubspaceBasis
    residual: float
    tolerance: float

    @property
    def consistent(self) -> bool:
        return self.residual <= self.tolerance

    @property
    def unique(self) -> bool:
        return self.kernel.dim == 0


def rank(m, scale=0.0) -> int:
    """Singular values above tol_rank; `scale` sets a floor for sigma_ref."""
    m = as_matrix(m)
    if m.size and min(m.shape) == 1:
        s = np.array([np.linalg.norm(m)])
    else:
        _, s, _ = svd(m)
    return _numeric_rank(s, m.shape, _policy, scale)


def kernel_basis(m) -> SubspaceBasis:
    """Orthonormal basis of the right null space."""
    m = as_matrix(m)
    _, s, vt = svd(m)
    r = _numeric_rank(s, m.shape, _policy)
    return SubspaceBasis(m.shape[1], fix_signs(vt[r:].T))


def cokernel_basis(m) -> SubspaceBasis:
    """Orthonormal basis of the left null space, ordered by descending singular value."""
    m = as_matrix(m)
    u, s, _ = svd(m)
    r = _numeric_rank(s, m.shape, _policy)
    return SubspaceBasis(m.shape[0], fix_signs(u[:, r:]))


def column_space(m, scale=0.0) -> np.ndarray:
    m = as_matrix(m)
    u, s, _ = svd(m)
    r = _numeric_rank(s, m.shape, _policy, scale)
    return fix_signs(u[:, :r])


def annihilator_basis(e: SubspaceBasis) -> SubspaceBasis:
    """Covectors (as columns) vanishing on E."""
    if e.dim == 0:
        return SubspaceBasis(e.ambient, np.eye(e.ambient))
    return cokernel_basis(e.vectors)


def pinv(m) -> np.ndarray:
    """Pseudo-inverse truncated at tol_rank."""
    m = as_matrix(m)
    if m.size and min(m.shape) == 1:
        s = float(np.linalg.norm(m))
        if _numeric_rank(np.array([s]), m.shape, _policy) == 0:
            return np.zeros((m.shape[1], m.shape[0]))
        return m.T / (s * s)
    u, s, vt = svd(m)
    r = _numeric_rank(s, m.shape, _policy)
    if r == 0:
        return np.zeros((m.shape[1], m.shape[0]))
    return (vt[:r].T / s[:r]) @ u[:, :r].T


def solve_affine(m, b, scale=0.0) -> AffineSolutionSet:
    """Least-squares particular solution, kernel and consistency residual of m.v = b."""
    m = as_matrix(m)
    b = np.asarray(b, dtype=float).ravel()
    rows, cols = m.shape
    if b.size != rows:
        raise ShapeError(f"right-hand side has {b.size} entries, matrix has {rows} rows")
    if cols == 1 and rows:
        return _solve_column(m[:, 0], b, scale)
    u, s, vt = svd(m)
    r = _numeric_rank(s, m.shape, _policy, scale)
    if r:
        x0 = vt[:r].T @ ((u[:, :r].T @ b) / s[:r])
    else:
        x0 = np.zeros(cols)
    residual = float(np.linalg.norm(m @ x0 - b)) if rows else 0.0
    tol = _policy.image_tol(s, m.shape, float(np.linalg.norm(b)), scale)
    return AffineSolutionSet(x0, SubspaceBasis(cols, fix_signs(vt[r:].T)), residual, tol)


def _solve_column(v, b, scale):
    s = np.array([np.linalg.norm(v)])
    shape = (v.size, 1)
    r = _numeric_rank(s, shape, _policy, scale)
    x0 = np.array([v @ b / (s[0] * s[0])]) if r else np.zeros(1)
    residual = float(np.linalg.norm(v * x0[0] - b))
    tol = _policy.image_tol(s, shape, float(np.linalg.norm(b)), scale)
    return AffineSolutionSet(x0, SubspaceBasis(1, np.ones((1, 1 - r))), residual, tol)


def complement_projectors(e: SubspaceBasis, f: SubspaceBasis):
    """(P, Q): P projects onto E along F, Q = I - P projects onto F along E."""
    n = e.ambient
    if f.ambient != n:
        raise ShapeError(f"subspaces live in R^{e.ambient} and R^{f.ambient}")
    if e.dim + f.dim != n:
        raise NotComplementaryError(f"dim E + dim F = {e.dim + f.dim}, ambient dimension is {n}")
    joined = np.hstack([e.vectors, f.vectors])
    if rank(joined) < n:
        raise NotComplementaryError("E and F intersect nontrivially")
    coefficients = np.linalg.solve(joined, np.eye(n))
    p = e.vectors @ coefficients[:e.dim]
    return p, np.eye(n) - p


@dataclass(frozen=True, eq=False)
class SubspaceClassification:
    sum_full: bool
    intersection_zero: bool
    direct_sum: bool
    D: np.ndarray


def subspace_classify(alpha: SubspaceBasis, v: SubspaceBasis) -> SubspaceClassification:
    """alpha: p covectors spanning the annihilator of E; v: frame of F (q vectors).

    D[i, j] = <alpha_i, v_j>; E + F = G iff rank D = p, E n F = 0 iff rank D = q.
    """
    if alpha.ambient != v.ambient:
        raise ShapeError("covectors and vectors have different ambient dimensions")
    p, q = alpha.dim, v.dim
    d = alpha.vectors.T @ v.vectors
    r = rank(d, norm2(alpha.vectors) * norm2(v.vectors)) if d.size else 0
    sum_full = r == p
    intersection_zero = r == q
    return SubspaceClassification(sum_full, intersection_zero, sum_full and intersection_zero and p == q, d)


# Quotient maps f_bar = p o f o j : E0 -> F / F0, represented through the
# annihilator of F0 (no quotient space is built).

def quotient_matrix(f, e0: SubspaceBasis, f0: SubspaceBasis) -> np.ndarray:
    f = as_matrix(f)
    w = annihilator_basis(f0).vectors
    return w.T @ f @ e0.vectors


def _quotient_scale(f, e0):
    # w is orthonormal
    return norm2(as_matrix(f)) * norm2(e0.vectors)


def quotient_injective(f, e0: SubspaceBasis, f0: SubspaceBasis) -> bool:
    """True iff E0 n f^-1(F0) = 0."""
    qm = quotient_matrix(f, e0, f0)
    return (rank(qm, _quotient_scale(f, e0)) if qm.size else 0) == e0.dim


def quotient_surjective(f, e0: SubspaceBasis, f0: SubspaceBasis) -> bool:
    """True iff f(E0) + F0 = F."""
    qm = quotient_matrix(f, e0, f0)
    return (rank(qm, _quotient_scale(f, e0)) if qm.size else 0) == qm.shape[0]


def solve_quotient(f, e0: SubspaceBasis, f0: SubspaceBasis, b) -> AffineSolutionSet:
    """Solve f_bar(x) = b_bar for x in E0; solutions returned in E coordinates."""
    w = annihilator_basis(f0).vectors
    reduced = solve_affine(quotient_matrix(f, e0, f0), w.T @ np.asarray(b, dtype=float).ravel(),
                           _quotient_scale(f, e0))
    kernel = e0.vectors @ reduced.kernel.vectors
    return AffineSolutionSet(e0.vectors @ reduced.particular,
                             SubspaceBasis(e0.ambient, kernel), reduced.residual, reduced.tolerance)
