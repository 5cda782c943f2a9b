import numpy as np
import pytest
from numpy.testing import assert_allclose

from scripts.common import ShapeError, UndeclaredVariableError
from scripts.expr import ExpressionField
from scripts.linsing import (
    constraint_algorithm_sample, consistency_at, make_system, primary_constraint_values, solve_at,
)
from scripts.scenarios import SCENARIOS

XY = ('x', 'y')


def _system(a_rows, f_entries, variables=XY):
    a = None if a_rows is None else ExpressionField.parse_matrix(a_rows, variables)
    return make_system(a, ExpressionField.parse_vector(f_entries, variables))


def test_make_system_defaults_to_identity():
    sys = _system(None, ["1", "y"])
    assert sys.is_explicit()
    assert_allclose(sys.A_at([0.3, 0.7]), np.eye(2))
    assert (sys.k, sys.n) == (2, 2)


def test_make_system_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        _system([["1", "0"], ["0", "1"]], ["1", "2", "3"])
    with pytest.raises(ShapeError):
        _system([["1"], ["0"]], ["1", "2"])
    a = ExpressionField.parse_matrix([["1", "0"], ["0", "1"]], XY)
    with pytest.raises(UndeclaredVariableError):
        make_system(a, ExpressionField.parse_vector(["1", "1"], ('x', 'w')))


def test_consistency_and_primary_constraints():
    sys = _system([["1", "0"], ["0", "0"]], ["1", "x - y"])
    on_line = consistency_at(sys, [0.4, 0.4])
    assert on_line.consistent and on_line.residual == pytest.approx(0.0, abs=1e-14)
    off_line = consistency_at(sys, [1.0, 0.0])
    assert not off_line.consistent
    assert off_line.residual == pytest.approx(1.0)
    assert_allclose(np.abs(primary_constraint_values(sys, [1.0, 0.0])), [1.0])
    assert primary_constraint_values(_system(None, ["1", "y"]), [0.0, 1.0]).size == 0


def test_consistency_matches_primary_constraints():
    rng = np.random.default_rng(17)
    for _ in range(200):
        k = int(rng.integers(1, 5))
        n = int(rng.integers(1, 5))
        r = int(rng.integers(0, min(k, n) + 1))
        a = rng.integers(-3, 4, size=(k, r)) @ rng.integers(-3, 4, size=(r, n))
        if rng.random() < 0.5:
            f = a @ rng.integers(-3, 4, size=n)
        else:
            f = rng.integers(-3, 4, size=k)
        variables = tuple(f"x{i}" for i in range(n))
        sys = _system([[str(int(v)) for v in row] for row in a], [str(int(v)) for v in f], variables)
        point = np.zeros(n)
        values = primary_constraint_values(sys, point)
        vanish = values.size == 0 or np.max(np.abs(values)) <= 1e-9
        assert consistency_at(sys, point).consistent == vanish


def test_solve_at_explicit_system():
    spec = SCENARIOS['example1'].load()
    solution = solve_at(spec.system, [0.5, 2.0])
    assert_allclose(solution.particular, [1.0, 2.0])
    assert solution.unique and solution.consistent


def test_solve_at_zero_matrix_has_full_kernel():
    sys = _system([["0", "0"], ["0", "0"]], ["0", "0"])
    solution = solve_at(sys, [1.0, 1.0])
    assert solution.kernel.dim == 2
    assert solution.consistent


def test_solve_at_with_extra_rows_and_quotient():
    sys = _system([["1", "0"], ["0", "0"]], ["1", "0"])
    solution = solve_at(sys, [0.0, 0.0], extra_rows=([[1.0, -1.0]], [0.0]))
    assert_allclose(solution.particular, [1.0, 1.0])
    assert solution.unique

    # second row only modulo span (0, 1)
    sys = _system(None, ["1", "5"])
    solution = solve_at(sys, [0.0, 0.0], extra_rows=([[0.0, 1.0]], [2.0]), quotient=[[0.0], [1.0]])
    assert_allclose(solution.particular, [1.0, 2.0])
    with pytest.raises(ShapeError):
        solve_at(sys, [0.0, 0.0], extra_rows=([[1.0, 0.0, 0.0]], [0.0]))


def test_constraint_algorithm_primary_only():
    sys = _system([["1", "0"], ["0", "0"]], ["1", "x - y"])
    result = constraint_algorithm_sample(sys, [[0.2, 0.2], [-1.0, -1.0], [0.0, 1.0]])
    assert result.labels == ["survives", "survives", 0]
    assert result.converged
    assert result.ranks[0] == [1, 2]
    assert result.stacks[0].levels == 1
    assert len(result.stacks[0]) == 1
    assert result.surviving == [0, 1]
    assert abs(result.stacks[2].records[0].value) == pytest.approx(1.0)


def test_constraint_algorithm_finds_secondary_constraint():
    # xdot = y, 0 = x: the tangency of x = 0 forces y = 0
    sys = _system([["1", "0"], ["0", "0"]], ["y", "x"])
    result = constraint_algorithm_sample(sys, [[0.0, 0.0], [0.0, 0.5], [1.0, 0.0]])
    assert result.labels == ["survives", 1, 0]
    assert result.converged
    assert result.stacks[0].levels == 2
    assert [r.level for r in result.stacks[1].records] == [0, 1]
    assert abs(result.stacks[1].records[1].value) == pytest.approx(0.5 / np.sqrt(2.0), rel=1e-9)
    assert not result.warnings
    assert_allclose(result.stacks[0].values([0.0, 0.0]), 0.0, atol=1e-9)


def test_constraint_algorithm_on_regular_system():
    result = constraint_algorithm_sample(_system(None, ["1", "y"]), [[0.0, 1.0], [2.0, -3.0]])
    assert result.labels == ["survives", "survives"]
    assert all(len(stack) == 0 for stack in result.stacks)
    assert result.ranks == [[2], [2]]
