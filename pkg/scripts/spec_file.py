"""
Line-oriented system description files (.lss).

    # comment
    [vars]          state = x, y        |  q = x, y, z  and  v = x', y', z'
                    lift = z'           (coordinates adjusted when lifting points onto M)
    [params]        a = 2               (expressions, substituted where the name appears)
    [system]        A = 1, 0            (one line per row, optional: identity)
                    f = 1, y
    [lagrangian]    L = (x'^2 + y'^2)/2
    [constraints]   phi = y - a         (one line per constraint)
    [forces]        delta = x, 1        (one line per frame vector)
    [symmetry]      V = ...  Lambda = row ... lift = tangent|cotangent
                    map = ...  Phi = row ...
    [constant]      h = y'              (one line per candidate)
    [box]           x = -1, 1           (sampling box per coordinate)
    [initial]       x' = 2              (defaults for coordinates not given on the command line)

Exactly one of [system] and [lagrangian] must be present.
"""

from __future__ import annotations

import os
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from scripts.common import ExpressionError, LssError, ShapeError, SpecFileError
from scripts.expr import Expr, ExpressionField, parse
from scripts.lagrangian import LagrangianModel, VelocityConstraintSpec, chetaev_frame, nonholonomic_lagrangian
from scripts.linsing import LinearlySingularSystem, make_system
from scripts.nonholo import GeneralizedNonholonomicSystem, make_nonholonomic
from scripts.symmetry import SymmetryCandidate

SECTIONS = ('vars', 'params', 'system', 'lagrangian', 'constraints', 'forces',
            'symmetry', 'constant', 'box', 'initial')
DEFAULT_BOX = (-1.0, 1.0)


@dataclass
class _Line:
    number: int
    key: str
    value: str


class _Params(Mapping):
    """Parameters parsed lazily so definitions may refer to each other in any order."""

    def __init__(self, texts, variables):
        self.texts = texts  # name -> (text, line)
        self.variables = variables
        self.parsed = {}
        self.active = []

    def __getitem__(self, name):
        if name in self.parsed:
            return self.parsed[name]
        if name in self.active:
            cycle = " -> ".join(self.active + [name])
            raise SpecFileError(f"parameter cycle {cycle}", 'params', self.texts[name][1])
        text, line = self.texts[name]
        self.active.append(name)
        try:
            expr = parse(text, self.variables, self)
        except ExpressionError as e:
            raise SpecFileError(f"parameter '{name}': {e}", 'params', line) from e
        finally:
            self.active.pop()
        self.parsed[name] = expr
        return expr

    def __iter__(self):
        return iter(self.texts)

    def __len__(self):
        return len(self.texts)


@dataclass(eq=False)
class SpecFile:
    name: str
    variables: tuple
    system: LinearlySingularSystem
    params: dict = field(default_factory=dict)
    model: LagrangianModel | None = None
    constraint_names: tuple = ()
    constraints: ExpressionField | None = None
    forces: ExpressionField | None = None
    symmetry: SymmetryCandidate | None = None
    constants: dict = field(default_factory=dict)
    box: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    lift: tuple = ()

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def kind(self) -> str:
        return 'lagrangian' if self.model is not None else 'system'

    def has_constraints(self) -> bool:
        return self.constraints is not None and self.constraints.shape[0] > 0

    def nonholonomic(self, manifold_tol=None) -> GeneralizedNonholonomicSystem:
        """The constrained system (zero constraints and forces when none are declared)."""
        kwargs = {} if manifold_tol is None else {'manifold_tol': manifold_tol}
        phi = self.constraints if self.constraints is not None else \
            ExpressionField(self.variables, (0,), ())
        if self.model is not None:
            return nonholonomic_lagrangian(self.model, VelocityConstraintSpec(phi), self.forces, **kwargs)
        forces = self.forces
        if forces is None:
            if phi.shape[0]:
                raise SpecFileError("a [system] with [constraints] needs a [forces] frame", 'forces')
            forces = ExpressionField(self.variables, (self.system.k, 0), ())
        return make_nonholonomic(self.system, phi, forces, **kwargs)

    def point(self, assignments=None) -> np.ndarray:
        """Full coordinate vector: given values, then [initial] defaults, then 0."""
        assignments = dict(assignments or {})
        unknown = set(assignments) - set(self.variables)
        if unknown:
            raise SpecFileError(f"unknown coordinate '{sorted(unknown)[0]}'")
        return np.array([assignments.get(name, self.initial.get(name, 0.0)) for name in self.variables],
                        dtype=float)

    def free_indices(self, given=()):
        """Coordinates moved when lifting a point onto M: [vars] lift, else the ones not given."""
        if self.lift:
            return [self.variables.index(name) for name in self.lift]
        free = [i for i, name in enumerate(self.variables) if name not in given]
        return free or None

    def bounds(self):
        lower = np.array([self.box.get(name, DEFAULT_BOX)[0] for name in self.variables], dtype=float)
        upper = np.array([self.box.get(name, DEFAULT_BOX)[1] for name in self.variables], dtype=float)
        return lower, upper

    def expression(self, text) -> Expr:
        """Parse an extra expression (e.g. a command-line monitor) with this file's params."""
        return parse(text, self.variables, self.params)

    def value(self, text) -> float:
        """Numeric value of a constant expression such as '0.5' or 'sqrt(2)*c'."""
        return float(ExpressionField.scalar(parse(text, (), self.params), ()).evaluate(()))


def _split_entries(value):
    return [part.strip() for part in value.split(',')]


def _read_sections(text):
    sections = {}
    current = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if line.startswith('[') and line.endswith(']'):
            current = line[1:-1].strip().lower()
            if current not in SECTIONS:
                raise SpecFileError(f"unknown section [{current}]", current, number)
            if current in sections:
                raise SpecFileError(f"section [{current}] appears twice", current, number)
            sections[current] = []
            continue
        if current is None:
            raise SpecFileError("content before the first section", None, number)
        if '=' not in line:
            raise SpecFileError(f"expected 'name = value', got '{line}'", current, number)
        key, value = line.split('=', 1)
        sections[current].append(_Line(number, key.strip(), value.strip()))
    return sections


def parse_assignments(text):
    """'x=0.5, y=1' -> {'x': '0.5', 'y': '1'} (values kept as text)."""
    out = {}
    if not text:
        return out
    for part in text.split(','):
        part = part.strip()
        if not part:
            continue
        if '=' not in part:
            raise SpecFileError(f"expected key=value, got '{part}'")
        key, value = part.split('=', 1)
        out[key.strip()] = value.strip()
    return out


def loads(text, name='<string>', overrides=None) -> SpecFile:
    """Build a SpecFile from .lss text; `overrides` replace or add [params] entries."""
    sections = _read_sections(text)
    if ('system' in sections) == ('lagrangian' in sections):
        raise SpecFileError("exactly one of [system] and [lagrangian] must be present")
    if 'vars' not in sections:
        raise SpecFileError("missing [vars] section", 'vars')

    declared = {line.key: line for line in sections['vars']}
    lift = tuple(_split_entries(declared['lift'].value)) if 'lift' in declared else ()
    q_names = v_names = None
    if 'lagrangian' in sections:
        if 'q' not in declared or 'v' not in declared:
            raise SpecFileError("a [lagrangian] spec declares 'q = ...' and 'v = ...'", 'vars')
        q_names = tuple(_split_entries(declared['q'].value))
        v_names = tuple(_split_entries(declared['v'].value))
        variables = q_names + v_names
    else:
        if 'state' not in declared:
            raise SpecFileError("a [system] spec declares 'state = ...'", 'vars')
        variables = tuple(_split_entries(declared['state'].value))
    if len(set(variables)) != len(variables) or not all(variables):
        raise SpecFileError("duplicate or empty coordinate names", 'vars')
    for coordinate in lift:
        if coordinate not in variables:
            raise SpecFileError(f"lift coordinate '{coordinate}' is not declared", 'vars', declared['lift'].number)

    texts = {line.key: (line.value, line.number) for line in sections.get('params', [])}
    for key, value in (overrides or {}).items():
        texts[key] = (str(value), None)
    for key in texts:
        if key in variables:
            raise SpecFileError(f"parameter '{key}' shadows a coordinate", 'params', texts[key][1])
    params = _Params(texts, variables)

    def expr(line, section):
        try:
            return parse(line.value, variables, params)
        except ExpressionError as e:
            raise SpecFileError(str(e), section, line.number) from e

    def entries(line, section):
        try:
            return [parse(part, variables, params) for part in _split_entries(line.value)]
        except ExpressionError as e:
            raise SpecFileError(str(e), section, line.number) from e

    def field_or_error(build, section, number=None):
        try:
            return build()
        except LssError as e:
            if isinstance(e, SpecFileError):
                raise
            raise SpecFileError(str(e), section, number) from e

    model = None
    if 'lagrangian' in sections:
        lines = [line for line in sections['lagrangian'] if line.key == 'L']
        if len(lines) != 1:
            raise SpecFileError("[lagrangian] needs exactly one 'L = ...'", 'lagrangian')
        model = field_or_error(lambda: LagrangianModel(q_names, v_names, expr(lines[0], 'lagrangian')),
                               'lagrangian', lines[0].number)
        system = model.system
    else:
        rows = [line for line in sections['system'] if line.key == 'A']
        f_lines = [line for line in sections['system'] if line.key == 'f']
        if len(f_lines) != 1:
            raise SpecFileError("[system] needs exactly one 'f = ...'", 'system')
        f = field_or_error(lambda: ExpressionField.vector(entries(f_lines[0], 'system'), variables),
                           'system', f_lines[0].number)
        A = None
        if rows:
            A = field_or_error(
                lambda: ExpressionField.matrix([entries(line, 'system') for line in rows], variables),
                'system', rows[0].number)
        system = field_or_error(lambda: make_system(A, f), 'system', f_lines[0].number)

    constraint_lines = sections.get('constraints', [])
    constraints = ExpressionField.vector([expr(line, 'constraints') for line in constraint_lines], variables)

    forces = None
    if sections.get('forces'):
        columns = [entries(line, 'forces') for line in sections['forces']]
        k = system.k
        if any(len(column) != k for column in columns):
            raise SpecFileError(f"every frame vector needs {k} entries", 'forces', sections['forces'][0].number)
        rows = [[columns[c][r] for c in range(len(columns))] for r in range(k)]
        forces = ExpressionField(variables, (k, len(columns)), tuple(e for row in rows for e in row))
    elif model is not None and constraint_lines:
        forces = field_or_error(lambda: chetaev_frame(model, VelocityConstraintSpec(constraints)), 'constraints')

    symmetry = None
    if sections.get('symmetry'):
        symmetry = _symmetry(sections['symmetry'], variables, system, model, entries, field_or_error)

    constants = {line.key: expr(line, 'constant') for line in sections.get('constant', [])}

    def number(line, section, text):
        try:
            return float(ExpressionField.scalar(parse(text, (), params), ()).evaluate(()))
        except (ExpressionError, ValueError) as e:
            raise SpecFileError(f"'{line.key}' needs a constant value: {e}", section, line.number) from e

    box = {}
    for line in sections.get('box', []):
        if line.key not in variables:
            raise SpecFileError(f"unknown coordinate '{line.key}'", 'box', line.number)
        parts = _split_entries(line.value)
        if len(parts) != 2:
            raise SpecFileError("box entries read 'name = lower, upper'", 'box', line.number)
        box[line.key] = (number(line, 'box', parts[0]), number(line, 'box', parts[1]))

    initial = {}
    for line in sections.get('initial', []):
        if line.key not in variables:
            raise SpecFileError(f"unknown coordinate '{line.key}'", 'initial', line.number)
        initial[line.key] = number(line, 'initial', line.value)

    resolved = {key: params[key] for key in texts}
    return SpecFile(name, variables, system, resolved, model,
                    tuple(line.key for line in constraint_lines), constraints, forces, symmetry,
                    constants, box, initial, lift)


def _symmetry(lines, variables, system, model, entries, field_or_error):
    keys = {line.key for line in lines}
    by_key = {}
    for line in lines:
        by_key.setdefault(line.key, []).append(line)
    if ('V' in keys) == ('map' in keys):
        raise SpecFileError("[symmetry] gives exactly one of 'V = ...' or 'map = ...'", 'symmetry')

    def matrix(key):
        if key not in by_key:
            return None
        return field_or_error(
            lambda: ExpressionField.matrix([entries(line, 'symmetry') for line in by_key[key]], variables),
            'symmetry', by_key[key][0].number)

    if 'V' in keys:
        line = by_key['V'][0]
        V = field_or_error(lambda: ExpressionField.vector(entries(line, 'symmetry'), variables),
                           'symmetry', line.number)
        lift = by_key['lift'][0].value if 'lift' in by_key else ('cotangent' if model is not None else 'tangent')
        return field_or_error(lambda: SymmetryCandidate.infinitesimal(V, matrix('Lambda'), lift),
                              'symmetry', line.number)
    line = by_key['map'][0]
    phi = field_or_error(lambda: ExpressionField.vector(entries(line, 'symmetry'), variables),
                         'symmetry', line.number)
    return field_or_error(lambda: SymmetryCandidate.finite_map(phi, matrix('Phi')), 'symmetry', line.number)


def load(path, overrides=None) -> SpecFile:
    """Read and validate a .lss file."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise SpecFileError(f"cannot read {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise SpecFileError(f"{path} is not valid UTF-8: {e}") from e
    name = os.path.splitext(os.path.basename(path))[0]
    return loads(text, name, overrides)
