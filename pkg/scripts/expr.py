"""
Expression language for coordinate formulas

Parses text such as "z' - y*x'" into an immutable AST over declared variables,
evaluates it in double precision, differentiates it symbolically (closed under
differentiation, any order) and evaluates it on dual numbers as a cross-check.

Grammar (precedence ^ > unary minus > * / > + -, ^ right-associative):
    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?
    atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'
Identifiers may end in apostrophes (x' for a velocity); '#' starts a comment.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

from scripts.common import DomainError, ParseError, ShapeError, UndeclaredVariableError

FUNCTIONS = ('sqrt', 'sin', 'cos', 'tan', 'exp', 'log', 'asinh', 'abs', 'sign')

# Printing precedence
_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_POW = 4
_PREC_ATOM = 5


def _format_number(value):
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(float(value))


def _sign(value):
    if value > 0:
        return 1.0
    if value < 0:
        return -1.0
    return 0.0


def _checked_pow(base, exponent):
    try:
        return math.pow(base, exponent)
    except (ValueError, ZeroDivisionError):
        raise ValueError("pow outside the real domain")


def _apply_function(name, value):
    if name == 'sqrt':
        if value < 0:
            raise ValueError("sqrt of negative argument")
        return math.sqrt(value)
    if name == 'log':
        if value <= 0:
            raise ValueError("log of non-positive argument")
        return math.log(value)
    if name == 'sin':
        return math.sin(value)
    if name == 'cos':
        return math.cos(value)
    if name == 'tan':
        return math.tan(value)
    if name == 'exp':
        return math.exp(value)
    if name == 'asinh':
        return math.asinh(value)
    if name == 'abs':
        return abs(value)
    if name == 'sign':
        return _sign(value)
    raise ValueError(f"unknown function '{name}'")


# ---------------------------------------------------------------------------
# Dual numbers (forward-mode cross-check of the symbolic derivatives)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dual:
    """Dual number a + b*eps with eps^2 = 0."""

    a: float
    b: float

    def __add__(self, other: Dual) -> Dual:
        return Dual(self.a + other.a, self.b + other.b)

    def __sub__(self, other: Dual) -> Dual:
        return Dual(self.a - other.a, self.b - other.b)

    def __mul__(self, other: Dual) -> Dual:
        return Dual(self.a * other.a, self.a * other.b + self.b * other.a)

    def __truediv__(self, other: Dual) -> Dual:
        if other.a == 0.0:
            raise ValueError("division by zero")
        return Dual(self.a / other.a, (self.b * other.a - self.a * other.b) / (other.a * other.a))

    def __neg__(self) -> Dual:
        return Dual(-self.a, -self.b)

    def __pow__(self, other: Dual) -> Dual:
        value = _checked_pow(self.a, other.a)
        slope = 0.0
        if self.b != 0.0:
            slope += other.a * _checked_pow(self.a, other.a - 1.0) * self.b
        if other.b != 0.0:
            if self.a <= 0.0:
                raise ValueError("pow with variable exponent needs a positive base")
            slope += value * math.log(self.a) * other.b
        return Dual(value, slope)

    def apply(self, name: str) -> Dual:
        value = _apply_function(name, self.a)
        a = self.a
        if name == 'sqrt':
            if a == 0.0:
                raise ValueError("sqrt is not differentiable at 0")
            slope = 0.5 / value
        elif name == 'log':
            slope = 1.0 / a
        elif name == 'sin':
            slope = math.cos(a)
        elif name == 'cos':
            slope = -math.sin(a)
        elif name == 'tan':
            slope = 1.0 / math.cos(a) ** 2
        elif name == 'exp':
            slope = value
        elif name == 'asinh':
            slope = 1.0 / math.sqrt(a * a + 1.0)
        elif name == 'abs':
            slope = _sign(a)
        else:
            slope = 0.0
        return Dual(value, slope * self.b)


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

class Expr:
    """Immutable expression node. Subclasses are frozen dataclasses."""

    precedence = _PREC_ATOM

    def evaluate(self, binding: Mapping[str, float]) -> float:
        try:
            return self._eval(binding)
        except _Located as located:
            raise DomainError(located.message, str(located.node)) from None

    def diff(self, var: str) -> Expr:
        raise NotImplementedError

    def dual(self, binding: Mapping[str, float], var: str) -> Dual:
        """Forward evaluation seeded with d(var) = 1."""
        try:
            return self._dual(binding, var)
        except _Located as located:
            raise DomainError(located.message, str(located.node)) from None

    def free_vars(self) -> frozenset:
        return frozenset()

    def is_constant(self) -> bool:
        return not self.free_vars()

    def _eval(self, binding):
        raise NotImplementedError

    def _dual(self, binding, var):
        raise NotImplementedError

    def _python(self, index: Mapping[str, int]) -> str:
        raise NotImplementedError

    def _wrap(self, child: Expr, paren: bool) -> str:
        text = str(child)
        return f"({text})" if paren else text


class _Located(Exception):
    """Internal: domain failure tagged with the innermost failing node."""

    def __init__(self, message, node):
        super().__init__(message)
        self.message = message
        self.node = node


def _guard(node, thunk):
    try:
        return thunk()
    except _Located:
        raise
    except (ValueError, ZeroDivisionError, OverflowError) as e:
        raise _Located(str(e) or type(e).__name__, node)


@dataclass(frozen=True)
class Const(Expr):
    value: float

    @property
    def precedence(self):
        return _PREC_NEG if self.value < 0 else _PREC_ATOM

    def _eval(self, binding):
        return self.value

    def _dual(self, binding, var):
        return Dual(self.value, 0.0)

    def diff(self, var):
        return ZERO

    def _python(self, index):
        return f"({self.value!r})"

    def __str__(self):
        return _format_number(self.value)


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def _eval(self, binding):
        return float(binding[self.name])

    def _dual(self, binding, var):
        return Dual(float(binding[self.name]), 1.0 if self.name == var else 0.0)

    def diff(self, var):
        return ONE if self.name == var else ZERO

    def free_vars(self):
        return frozenset((self.name,))

    def _python(self, index):
        return f"x[{index[self.name]}]"

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr
    precedence = _PREC_NEG

    def _eval(self, binding):
        return -self.arg._eval(binding)

    def _dual(self, binding, var):
        return -self.arg._dual(binding, var)

    def diff(self, var):
        return neg(self.arg.diff(var))

    def free_vars(self):
        return self.arg.free_vars()

    def _python(self, index):
        return f"(-{self.arg._python(index)})"

    def __str__(self):
        return "-" + self._wrap(self.arg, self.arg.precedence < _PREC_NEG)


@dataclass(frozen=True)
class _Binary(Expr):
    left: Expr
    right: Expr
    symbol = '?'

    def free_vars(self):
        return self.left.free_vars() | self.right.free_vars()

    def __str__(self):
        lhs = self._wrap(self.left, self.left.precedence < self.precedence)
        rhs = self._wrap(self.right, self.right.precedence <= self.precedence)
        return f"{lhs}{self.symbol}{rhs}"


@dataclass(frozen=True)
class Add(_Binary):
    precedence = _PREC_ADD
    symbol = ' + '

    def _eval(self, binding):
        return self.left._eval(binding) + self.right._eval(binding)

    def _dual(self, binding, var):
        return self.left._dual(binding, var) + self.right._dual(binding, var)

    def diff(self, var):
        return add(self.left.diff(var), self.right.diff(var))

    def _python(self, index):
        return f"({self.left._python(index)} + {self.right._python(index)})"


@dataclass(frozen=True)
class Sub(_Binary):
    precedence = _PREC_ADD
    symbol = ' - '

    def _eval(self, binding):
        return self.left._eval(binding) - self.right._eval(binding)

    def _dual(self, binding, var):
        return self.left._dual(binding, var) - self.right._dual(binding, var)

    def diff(self, var):
        return sub(self.left.diff(var), self.right.diff(var))

    def _python(self, index):
        return f"({self.left._python(index)} - {self.right._python(index)})"


@dataclass(frozen=True)
class Mul(_Binary):
    precedence = _PREC_MUL
    symbol = '*'

    def _eval(self, binding):
        return self.left._eval(binding) * self.right._eval(binding)

    def _dual(self, binding, var):
        return self.left._dual(binding, var) * self.right._dual(binding, var)

    def diff(self, var):
        return add(mul(self.left.diff(var), self.right), mul(self.left, self.right.diff(var)))

    def _python(self, index):
        return f"({self.left._python(index)} * {self.right._python(index)})"


@dataclass(frozen=True)
class Div(_Binary):
    precedence = _PREC_MUL
    symbol = '/'

    def _eval(self, binding):
        numerator = self.left._eval(binding)
        denominator = self.right._eval(binding)
        if denominator == 0.0:
            raise _Located("division by zero", self)
        return numerator / denominator

    def _dual(self, binding, var):
        numerator = self.left._dual(binding, var)
        denominator = self.right._dual(binding, var)
        return _guard(self, lambda: numerator / denominator)

    def diff(self, var):
        d_left = self.left.diff(var)
        d_right = self.right.diff(var)
        if _is_zero(d_right):
            return div(d_left, self.right)
        return div(sub(mul(d_left, self.right), mul(self.left, d_right)), power(self.right, TWO))

    def _python(self, index):
        return f"({self.left._python(index)} / {self.right._python(index)})"


@dataclass(frozen=True)
class Pow(_Binary):
    precedence = _PREC_POW
    symbol = '^'

    def _eval(self, binding):
        base = self.left._eval(binding)
        exponent = self.right._eval(binding)
        return _guard(self, lambda: _checked_pow(base, exponent))

    def _dual(self, binding, var):
        base = self.left._dual(binding, var)
        exponent = self.right._dual(binding, var)
        return _guard(self, lambda: base ** exponent)

    def diff(self, var):
        d_base = self.left.diff(var)
        d_exp = self.right.diff(var)
        if _is_zero(d_exp):
            # n * b^(n-1) * b'
            return mul(mul(self.right, power(self.left, sub(self.right, ONE))), d_base)
        if _is_zero(d_base):
            return mul(mul(self, call('log', self.left)), d_exp)
        return mul(self, add(mul(d_exp, call('log', self.left)),
                             div(mul(self.right, d_base), self.left)))

    def _python(self, index):
        return f"_pow({self.left._python(index)}, {self.right._python(index)})"

    def __str__(self):
        lhs = self._wrap(self.left, self.left.precedence <= _PREC_POW)
        rhs = self._wrap(self.right, self.right.precedence < _PREC_POW)
        return f"{lhs}^{rhs}"


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr

    def _eval(self, binding):
        value = self.arg._eval(binding)
        return _guard(self, lambda: _apply_function(self.func, value))

    def _dual(self, binding, var):
        value = self.arg._dual(binding, var)
        return _guard(self, lambda: value.apply(self.func))

    def diff(self, var):
        d_arg = self.arg.diff(var)
        if _is_zero(d_arg):
            return ZERO
        a = self.arg
        name = self.func
        if name == 'sqrt':
            outer = div(ONE, mul(TWO, self))
        elif name == 'sin':
            outer = call('cos', a)
        elif name == 'cos':
            outer = neg(call('sin', a))
        elif name == 'tan':
            outer = div(ONE, power(call('cos', a), TWO))
        elif name == 'exp':
            outer = self
        elif name == 'log':
            outer = div(ONE, a)
        elif name == 'asinh':
            outer = div(ONE, call('sqrt', add(power(a, TWO), ONE)))
        elif name == 'abs':
            # abs'(0) := 0
            outer = call('sign', a)
        else:
            return ZERO
        return mul(outer, d_arg)

    def free_vars(self):
        return self.arg.free_vars()

    def _python(self, index):
        return f"_{self.func}({self.arg._python(index)})"

    def __str__(self):
        return f"{self.func}({self.arg})"


ZERO = Const(0.0)
ONE = Const(1.0)
TWO = Const(2.0)


def _is_zero(e):
    return isinstance(e, Const) and e.value == 0.0


def _is_one(e):
    return isinstance(e, Const) and e.value == 1.0


def _fold(node):
    """Constant folding only: a node without variables collapses to its value."""
    if isinstance(node, Const) or node.free_vars():
        return node
    try:
        value = node._eval({})
    except _Located:
        return node
    if not math.isfinite(value):
        return node
    return Const(value)


def neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return _fold(Add(a, b))


def sub(a, b):
    if _is_zero(b):
        return a
    if _is_zero(a):
        return neg(b)
    return _fold(Sub(a, b))


def mul(a, b):
    if _is_zero(a) or _is_zero(b):
        return ZERO
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    if isinstance(a, Const) and a.value == -1.0:
        return neg(b)
    if isinstance(b, Const) and b.value == -1.0:
        return neg(a)
    return _fold(Mul(a, b))


def div(a, b):
    if _is_zero(a):
        return ZERO
    if _is_one(b):
        return a
    return _fold(Div(a, b))


def power(a, b):
    if _is_zero(b):
        return ONE
    if _is_one(b):
        return a
    return _fold(Pow(a, b))


def call(name, a):
    return _fold(Call(name, a))


def const(value):
    return Const(float(value))


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<op>[-+*/^()])
""", re.VERBOSE)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(text):
    tokens = []
    pos = 0
    byte_offset = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None:
            raise ParseError(f"unexpected character {text[pos]!r}", byte_offset)
        kind = match.lastgroup
        piece = match.group()
        if kind not in ('ws', 'comment'):
            tokens.append(_Token(kind, piece, byte_offset))
        byte_offset += len(piece.encode('utf-8'))
        pos = match.end()
    tokens.append(_Token('end', '', byte_offset))
    return tokens


class _Parser:
    def __init__(self, text, variables, macros):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.variables = set(variables)
        self.macros = macros or {}

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def expect(self, text):
        token = self.take()
        if token.text != text:
            self.fail(token, f"expected '{text}'")
        return token

    def fail(self, token, message=None):
        if message is None:
            message = "unexpected end of input" if token.kind == 'end' else f"unexpected '{token.text}'"
        raise ParseError(message, token.offset)

    def parse(self):
        node = self.expr()
        token = self.peek()
        if token.kind != 'end':
            self.fail(token)
        return node

    def expr(self):
        node = self.term()
        while self.peek().text in ('+', '-') and self.peek().kind == 'op':
            op = self.take().text
            rhs = self.term()
            node = Add(node, rhs) if op == '+' else Sub(node, rhs)
        return node

    def term(self):
        node = self.factor()
        while self.peek().text in ('*', '/') and self.peek().kind == 'op':
            op = self.take().text
            rhs = self.factor()
            node = Mul(node, rhs) if op == '*' else Div(node, rhs)
        return node

    def factor(self):
        token = self.peek()
        if token.kind == 'op' and token.text == '-':
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self):
        base = self.atom()
        token = self.peek()
        if token.kind == 'op' and token.text == '^':
            self.take()
            return Pow(base, self.factor())
        return base

    def atom(self):
        token = self.take()
        if token.kind == 'number':
            return Const(float(token.text))
        if token.kind == 'ident':
            following = self.peek()
            if following.kind == 'op' and following.text == '(':
                if token.text not in FUNCTIONS:
                    raise ParseError(f"unknown function '{token.text}'", token.offset)
                self.take()
                arg = self.expr()
                self.expect(')')
                return Call(token.text, arg)
            if token.text in self.variables:
                return Var(token.text)
            if token.text in self.macros:
                return self.macros[token.text]
            raise UndeclaredVariableError(token.text, token.offset)
        if token.kind == 'op' and token.text == '(':
            node = self.expr()
            self.expect(')')
            return node
        self.fail(token)


def parse(text: str, variables: Sequence[str], macros: Mapping[str, Expr] | None = None) -> Expr:
    """Parse text into an AST whose free variables are among `variables`.

    `macros` maps names (spec-file parameters) to already parsed expressions that
    are substituted where the name appears.
    """
    return _Parser(text, variables, macros).parse()


# ---------------------------------------------------------------------------
# Expression fields
# ---------------------------------------------------------------------------

_RUNTIME = {
    '_pow': _checked_pow,
    '_sqrt': lambda v: _apply_function('sqrt', v),
    '_log': lambda v: _apply_function('log', v),
    '_sin': math.sin,
    '_cos': math.cos,
    '_tan': math.tan,
    '_exp': math.exp,
    '_asinh': math.asinh,
    '_abs': abs,
    '_sign': _sign,
}


@dataclass(frozen=True)
class ExpressionField:
    """Scalar, vector or matrix of expressions over an ordered variable list.

    Entries are stored flat in row-major order; `shape` is () for a scalar.
    """

    variables: tuple
    shape: tuple
    entries: tuple

    def __post_init__(self):
        if len(set(self.variables)) != len(self.variables):
            raise ShapeError(f"duplicate variable names in {list(self.variables)}")
        expected = int(np.prod(self.shape)) if self.shape else 1
        if len(self.entries) != expected:
            raise ShapeError(f"{len(self.entries)} entries do not fill shape {self.shape}")
        declared = set(self.variables)
        for entry in self.entries:
            missing = entry.free_vars() - declared
            if missing:
                raise UndeclaredVariableError(sorted(missing)[0])

    # -- constructors -------------------------------------------------------

    @classmethod
    def scalar(cls, expr, variables):
        return cls(tuple(variables), (), (expr,))

    @classmethod
    def vector(cls, exprs, variables):
        exprs = tuple(exprs)
        return cls(tuple(variables), (len(exprs),), exprs)

    @classmethod
    def matrix(cls, rows, variables):
        rows = [tuple(r) for r in rows]
        cols = len(rows[0]) if rows else 0
        if any(len(r) != cols for r in rows):
            raise ShapeError("matrix rows have different lengths")
        return cls(tuple(variables), (len(rows), cols), tuple(e for r in rows for e in r))

    @classmethod
    def identity(cls, variables):
        n = len(variables)
        return cls.matrix([[ONE if i == j else ZERO for j in range(n)] for i in range(n)], variables)

    @classmethod
    def parse_vector(cls, texts, variables, macros=None):
        return cls.vector([parse(t, variables, macros) for t in texts], variables)

    @classmethod
    def parse_matrix(cls, rows, variables, macros=None):
        return cls.matrix([[parse(t, variables, macros) for t in row] for row in rows], variables)

    # -- structure ----------------------------------------------------------

    @property
    def n(self):
        return len(self.variables)

    def entry(self, *index):
        flat = int(np.ravel_multi_index(index, self.shape)) if self.shape else 0
        return self.entries[flat]

    def rows(self):
        if len(self.shape) != 2:
            raise ShapeError("rows() needs a matrix field")
        r, c = self.shape
        return [self.entries[i * c:(i + 1) * c] for i in range(r)]

    def binding(self, point):
        point = np.asarray(point, dtype=float).ravel()
        if point.size != self.n:
            raise ShapeError(f"point has {point.size} coordinates, expected {self.n}")
        return dict(zip(self.variables, point.tolist()))

    # -- evaluation ---------------------------------------------------------

    @cached_property
    def _compiled(self) -> Callable:
        index = {name: i for i, name in enumerate(self.variables)}
        source = "def _field(x):\n    return (" + "".join(
            e._python(index) + ", " for e in self.entries) + ")\n"
        namespace = dict(_RUNTIME)
        try:
            exec(compile(source, "<expression-field>", "exec"), namespace)
        except (SyntaxError, RecursionError, MemoryError, ValueError):
            return None
        return namespace['_field']

    def evaluate(self, point) -> np.ndarray | float:
        """Values at a full binding of the variable list (domain errors raised)."""
        x = np.asarray(point, dtype=float).ravel()
        if x.size != self.n:
            raise ShapeError(f"point has {x.size} coordinates, expected {self.n}")
        fn = self._compiled
        values = None
        if fn is not None:
            try:
                values = fn(x.tolist())
            except (ValueError, ZeroDivisionError, OverflowError):
                values = None
        if values is None:
            binding = dict(zip(self.variables, x.tolist()))
            values = [e.evaluate(binding) for e in self.entries]
        if not self.shape:
            return float(values[0])
        return np.array(values, dtype=float).reshape(self.shape)

    @cached_property
    def derivative_field(self) -> ExpressionField:
        """Field of exact partials, shape + (n,)."""
        return ExpressionField(self.variables, tuple(self.shape) + (self.n,),
                               tuple(e.diff(v) for e in self.entries for v in self.variables))

    def jacobian(self, point) -> np.ndarray:
        return self.derivative_field.evaluate(point)

    def dual_jacobian(self, point) -> np.ndarray:
        """Forward-mode derivatives via dual numbers (independent of diff())."""
        binding = self.binding(point)
        out = np.empty((len(self.entries), self.n))
        for i, e in enumerate(self.entries):
            for j, v in enumerate(self.variables):
                out[i, j] = e.dual(binding, v).b
        return out.reshape(tuple(self.shape) + (self.n,))

    def __str__(self):
        return ", ".join(str(e) for e in self.entries)


def finite_difference_jacobian(field: ExpressionField, point, relative_step=1e-6) -> np.ndarray:
    """Central differences with step h_i = relative_step * max(1, |x_i|)."""
    x = np.asarray(point, dtype=float).ravel()
    columns = []
    for i in range(x.size):
        h = relative_step * max(1.0, abs(x[i]))
        forward = x.copy()
        backward = x.copy()
        forward[i] += h
        backward[i] -= h
        columns.append((np.asarray(field.evaluate(forward)) - np.asarray(field.evaluate(backward))) / (2 * h))
    return np.stack(columns, axis=-1)


def jacobian(field: ExpressionField, point) -> np.ndarray:
    """Matrix of exact partials of a vector field at a point."""
    if len(field.shape) > 1:
        raise ShapeError("jacobian() needs a scalar or vector field")
    return field.jacobian(point)
