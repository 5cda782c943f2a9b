import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from scripts.common import DomainError, ParseError, UndeclaredVariableError
from scripts.expr import (
    Add, Call, Const, Div, ExpressionField, Mul, Neg, Sub, Var, finite_difference_jacobian, jacobian, parse,
)

ROSENBERG = ('x', 'y', 'z', "x'", "y'", "z'")


def test_parse_builds_tree():
    assert parse("x + 2*y", ('x', 'y')) == Add(Var('x'), Mul(Const(2.0), Var('y')))


def test_parse_precedence():
    # unary minus binds looser than ^, ^ is right associative
    assert parse("-x^2", ('x',)).evaluate({'x': 3.0}) == -9.0
    assert parse("2^3^2", ()).evaluate({}) == 512.0
    assert parse("x^-2", ('x',)).evaluate({'x': 2.0}) == 0.25
    assert parse("8/2/2", ()).evaluate({}) == 2.0
    assert parse("1 - 2 - 3", ()).evaluate({}) == -4.0


def test_parse_syntax_error_offset():
    with pytest.raises(ParseError) as info:
        parse("x +* y", ('x', 'y'))
    assert info.value.offset == 3


def test_parse_undeclared_variable():
    with pytest.raises(UndeclaredVariableError) as info:
        parse("x + w", ('x', 'y'))
    assert info.value.name == 'w'


def test_parse_comment_and_apostrophes():
    e = parse("z' - y*x'  # Rosenberg constraint", ROSENBERG)
    assert e.free_vars() == {"z'", 'y', "x'"}


def test_eval_examples():
    assert parse("y - 2", ('y',)).evaluate({'y': 2.0}) == 0.0
    assert parse("z' - y*x'", ROSENBERG).evaluate({'y': 1.0, "x'": 2.0, "z'": 2.0}) == 0.0
    assert parse("sqrt(y^2+1)", ('x', 'y')).evaluate({'x': 0.0, 'y': 1.0}) == pytest.approx(math.sqrt(2.0))


def test_eval_domain_error_names_subexpression():
    with pytest.raises(DomainError) as info:
        parse("1 + log(x)", ('x',)).evaluate({'x': -1.0})
    assert info.value.subexpression == 'log(x)'
    with pytest.raises(DomainError):
        parse("sqrt(x)", ('x',)).evaluate({'x': -1e-3})
    with pytest.raises(DomainError):
        parse("1/x", ('x',)).evaluate({'x': 0.0})


def test_derivatives():
    assert parse("y^2 + 1", ('y',)).diff('y').evaluate({'y': 3.0}) == 6.0
    d = parse("z' - y*x'", ROSENBERG).diff("x'")
    assert d.evaluate({'y': 1.5}) == -1.5
    e = parse("-3*v^2/2", ('v',))
    assert e.diff('v').evaluate({'v': 2.0}) == -6.0
    assert e.diff('v').diff('v').evaluate({'v': 2.0}) == -3.0


def test_abs_derivative_at_zero():
    d = parse("abs(x)", ('x',)).diff('x')
    assert d.evaluate({'x': 0.0}) == 0.0
    assert d.evaluate({'x': -2.0}) == -1.0


def test_jacobian_examples():
    field = ExpressionField.parse_vector(["x + y", "x*y"], ('x', 'y'))
    assert_allclose(jacobian(field, [1.0, 2.0]), [[1.0, 1.0], [2.0, 1.0]])

    phi = ExpressionField.parse_vector(["z' - y*x'"], ROSENBERG)
    assert_allclose(jacobian(phi, [0, 1, 0, 2, 3, 2]), [[0, -2, 0, -1, 0, 1]])

    constant = ExpressionField.parse_vector(["3", "-1"], ('x', 'y'))
    assert_allclose(jacobian(constant, [0.3, 0.7]), np.zeros((2, 2)))


def test_pretty_print_is_a_fixed_point():
    for text in ("x + 2*y", "sqrt(y^2 + 1)", "x^-2", "-(x - y)^2", "x/(y*z)", "(x - y) - (x - z)",
                 "(2^x)^y", "-3*x + 0.5", "exp(-x)*sin(y)"):
        once = str(parse(text, ('x', 'y', 'z')))
        assert str(parse(once, ('x', 'y', 'z'))) == once


def _random_expr(rng, depth):
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.7:
            return Var(('x', 'y', 'z')[rng.integers(3)])
        return Const(round(float(rng.uniform(-2.0, 2.0)), 3))
    a = _random_expr(rng, depth - 1)
    kind = rng.integers(8)
    if kind == 0:
        return Add(a, _random_expr(rng, depth - 1))
    if kind == 1:
        return Sub(a, _random_expr(rng, depth - 1))
    if kind == 2:
        return Mul(a, _random_expr(rng, depth - 1))
    if kind == 3:
        b = _random_expr(rng, depth - 1)
        return Div(a, Add(Const(2.0), Mul(b, b)))
    if kind == 4:
        return Call('sin', a)
    if kind == 5:
        return Call('exp', Call('cos', a))
    if kind == 6:
        return Call('sqrt', Add(Const(1.0), Mul(a, a)))
    return Neg(a)


def test_symbolic_dual_and_finite_differences_agree():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        e = _random_expr(rng, 4)
        field = ExpressionField.vector([e], ('x', 'y', 'z'))
        point = rng.uniform(-1.0, 1.0, 3)
        exact = field.jacobian(point)
        assert_allclose(exact, field.dual_jacobian(point), rtol=1e-12, atol=1e-12)
        assert_allclose(exact, finite_difference_jacobian(field, point), rtol=1e-6, atol=1e-6)


def test_derivative_is_linear():
    rng = np.random.default_rng(11)
    for _ in range(100):
        e1 = _random_expr(rng, 3)
        e2 = _random_expr(rng, 3)
        combined = Add(Mul(Const(2.0), e1), Mul(Const(-3.0), e2))
        point = dict(zip(('x', 'y', 'z'), rng.uniform(-1.0, 1.0, 3)))
        for var in ('x', 'y', 'z'):
            expected = 2.0 * e1.diff(var).evaluate(point) - 3.0 * e2.diff(var).evaluate(point)
            assert combined.diff(var).evaluate(point) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_field_shapes_and_compiled_evaluation():
    m = ExpressionField.parse_matrix([["x", "1"], ["0", "x*y"]], ('x', 'y'))
    assert m.shape == (2, 2)
    assert_allclose(m.evaluate([2.0, 3.0]), [[2.0, 1.0], [0.0, 6.0]])
    assert m.derivative_field.shape == (2, 2, 2)
    assert_allclose(m.jacobian([2.0, 3.0])[1, 1], [3.0, 2.0])
    assert ExpressionField.scalar(parse("x*y", ('x', 'y')), ('x', 'y')).evaluate([2.0, 4.0]) == 8.0


def test_field_evaluation_reports_domain_errors():
    field = ExpressionField.parse_vector(["x", "sqrt(y)"], ('x', 'y'))
    with pytest.raises(DomainError) as info:
        field.evaluate([1.0, -1.0])
    assert info.value.subexpression == 'sqrt(y)'
