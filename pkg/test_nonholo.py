import numpy as np
import pytest
from numpy.testing import assert_allclose

from scripts import linalg
from scripts.common import (
    BaseNotRegularError, InconsistentError, NotOnManifoldError, ProjectionDivergenceError,
)
from scripts.expr import ExpressionField
from scripts.linsing import make_system
from scripts.nonholo import (
    D_matrix_at, H_frame_at, classify_at, constraint_force_at, force_residual_at, free_field_at,
    make_nonholonomic, multipliers_at, project_to_manifold, projectors_at, solve_constrained_at,
)
from scripts.scenarios import SCENARIOS

ROSENBERG_POINT = np.array([0.0, 1.0, 0.0, 2.0, 3.0, 2.0])


@pytest.fixture(scope="module")
def example1():
    return SCENARIOS['example1'].load().nonholonomic()


@pytest.fixture(scope="module")
def rosenberg():
    return SCENARIOS['rosenberg'].load().nonholonomic()


def test_example1_classification_and_field(example1):
    x = np.array([0.5, 2.0])
    assert_allclose(H_frame_at(example1, x), [[0.5], [1.0]])
    assert_allclose(D_matrix_at(example1, x), [[1.0]])
    c = classify_at(example1, x)
    assert c.regular and c.surjective and c.injective and c.rank_D == 1
    solution = solve_constrained_at(example1, x)
    assert_allclose(solution.u, [-2.0])
    assert_allclose(solution.X, [0.0, 0.0], atol=1e-14)
    assert not solution.gauge
    assert_allclose(constraint_force_at(example1, x), [1.0, 2.0])


def test_example1_projector(example1):
    for xv in np.linspace(-1.0, 1.0, 7):
        p, q = projectors_at(example1, [xv, 2.0])
        assert_allclose(p @ [0.0, 1.0], [-xv, 0.0], atol=1e-12)
        assert_allclose(p + q, np.eye(2), atol=1e-12)


def test_rosenberg_frame_and_multiplier(rosenberg):
    gamma = H_frame_at(rosenberg, ROSENBERG_POINT)
    assert gamma.shape == (6, 1)
    assert_allclose(gamma[:3, 0], 0.0, atol=1e-12)
    assert gamma[4, 0] == pytest.approx(0.0, abs=1e-12)
    assert gamma[3, 0] == pytest.approx(-gamma[5, 0])
    assert_allclose(D_matrix_at(rosenberg, ROSENBERG_POINT), [[-2.0]], atol=1e-12)

    solution = solve_constrained_at(rosenberg, ROSENBERG_POINT)
    assert_allclose(solution.u, [-3.0], atol=1e-12)
    assert_allclose(solution.X, [2.0, 3.0, 2.0, -3.0, 0.0, 3.0], atol=1e-12)
    y = free_field_at(rosenberg, ROSENBERG_POINT)
    assert_allclose(y, [2.0, 3.0, 2.0, 0.0, 0.0, 0.0], atol=1e-12)
    assert_allclose(multipliers_at(rosenberg, ROSENBERG_POINT, y).u, [-3.0], atol=1e-12)


def test_constrained_field_is_tangent_and_forced_along_frame(rosenberg):
    rng = np.random.default_rng(23)
    for _ in range(50):
        x = rng.uniform(-3.0, 3.0, 6)
        x[5] = x[1] * x[3]
        X = solve_constrained_at(rosenberg, x).X
        assert_allclose(rosenberg.M.jacobian(x) @ X, 0.0, atol=1e-10)
        assert force_residual_at(rosenberg, x, X) <= 1e-10


def test_projector_agrees_with_multiplier_solve(example1, rosenberg):
    rng = np.random.default_rng(29)
    for gnh, make_point in ((example1, lambda: np.array([rng.uniform(-1, 1), 2.0])),
                            (rosenberg, lambda: _rosenberg_point(rng))):
        for _ in range(100):
            x = make_point()
            y = rng.normal(size=gnh.n)
            p, _ = projectors_at(gnh, x)
            X = solve_constrained_at(gnh, x, y).X
            assert_allclose(X, p @ y, atol=1e-9 * (1.0 + np.linalg.norm(y)))


def _rosenberg_point(rng):
    x = rng.uniform(-3.0, 3.0, 6)
    x[5] = x[1] * x[3]
    return x


def test_classification_agrees_with_subspace_test(example1, rosenberg):
    rng = np.random.default_rng(31)
    for gnh, x in ((example1, np.array([0.3, 2.0])), (rosenberg, _rosenberg_point(rng))):
        alpha = linalg.SubspaceBasis(gnh.n, gnh.M.jacobian(x).T)
        subspaces = linalg.subspace_classify(alpha, linalg.SubspaceBasis.of_columns(H_frame_at(gnh, x)))
        assert classify_at(gnh, x).regular == subspaces.direct_sum


def test_tangent_frame_gives_non_regular_classification():
    # forces along the constraint surface: D = 0
    xy = ('x', 'y')
    base = make_system(None, ExpressionField.parse_vector(["1", "y"], xy))
    gnh = make_nonholonomic(base, ExpressionField.parse_vector(["y - 2"], xy),
                            ExpressionField.parse_matrix([["1"], ["0"]], xy))
    c = classify_at(gnh, [0.0, 2.0])
    assert not c.surjective and not c.regular and c.rank_D == 0
    with pytest.raises(InconsistentError):
        solve_constrained_at(gnh, [0.0, 2.0])


def test_singular_base_is_rejected():
    spec = SCENARIOS['relparticle-L1'].load()
    gnh = spec.nonholonomic()
    x = project_to_manifold(gnh.M, spec.point(), free=spec.free_indices())
    with pytest.raises(BaseNotRegularError):
        H_frame_at(gnh, x)


def test_off_manifold_point_is_rejected(rosenberg):
    with pytest.raises(NotOnManifoldError):
        H_frame_at(rosenberg, [0.0, 1.0, 0.0, 2.0, 3.0, 5.0])


def test_project_to_manifold(rosenberg):
    x = project_to_manifold(rosenberg.M, [0.0, 1.0, 0.0, 2.0, 3.0, 5.0], free=[5])
    assert_allclose(x, ROSENBERG_POINT, atol=1e-12)
    x = project_to_manifold(rosenberg.M, [0.3, -2.0, 1.0, 1.0, 0.5, 0.0])
    assert rosenberg.M.violation(x) <= 1e-10


def test_project_to_manifold_divergence():
    xy = ('x', 'y')
    M = make_nonholonomic(make_system(None, ExpressionField.parse_vector(["0", "0"], xy)),
                          ExpressionField.parse_vector(["x^2 + 1"], xy),
                          ExpressionField.parse_matrix([["1"], ["0"]], xy)).M
    with pytest.raises(ProjectionDivergenceError):
        project_to_manifold(M, [1.0, 0.0], max_iter=5)
