import numpy as np
import pytest
from numpy.testing import assert_allclose

from scripts.common import SpecFileError
from scripts.scenarios import SCENARIOS
from scripts.spec_file import loads, parse_assignments

SYSTEM = """
# comment line
[vars]
state = x, y
lift = y

[params]
a = 2*b
b = 1

[system]
A = 1, 0
A = 0, x
f = 1, y

[constraints]
phi = y - a

[forces]
delta = x, 1

[box]
x = -1, 1
y = 0, a

[initial]
x = 0.5
"""


def test_loads_a_system_description():
    spec = loads(SYSTEM, name='toy')
    assert spec.name == 'toy'
    assert spec.variables == ('x', 'y')
    assert spec.kind == 'system'
    assert spec.has_constraints()
    assert spec.constraint_names == ('phi',)
    assert_allclose(spec.system.A_at([3.0, 0.0]), [[1.0, 0.0], [0.0, 3.0]])
    assert spec.box['y'] == (0.0, 2.0)
    assert_allclose(spec.point(), [0.5, 0.0])
    assert_allclose(spec.point({'y': 4.0}), [0.5, 4.0])
    assert spec.free_indices() == [1]
    assert spec.value('a + 1') == 3.0


def test_overrides_replace_params():
    spec = loads(SYSTEM, overrides={'b': '3'})
    assert spec.value('a') == 6.0
    assert spec.nonholonomic().M.values([0.0, 6.0])[0] == 0.0


def test_lagrangian_description_gets_chetaev_forces():
    text = "[vars]\nq = x\nv = x'\n[lagrangian]\nL = x'^2/2\n[constraints]\nphi = x' - 1\n"
    spec = loads(text)
    assert spec.kind == 'lagrangian'
    assert spec.forces.shape == (2, 1)
    assert_allclose(spec.forces.evaluate([0.0, 1.0]).reshape(2), [1.0, 0.0])


@pytest.mark.parametrize("text, section, line", [
    ("[vars]\nstate = x\n", None, None),
    ("[vars]\nstate = x\n[system]\nf = 1 +\n", 'system', 4),
    ("[vars]\nstate = x\n[system]\nf = w\n", 'system', 4),
    ("[vars]\nstate = x\n[nonsense]\n", 'nonsense', 3),
    ("[vars]\nstate = x\n[params]\na = b\nb = a\n[system]\nf = a\n", 'params', None),
    ("[vars]\nstate = x\n[params]\nx = 1\n[system]\nf = 1\n", 'params', 4),
    ("[vars]\nstate = x\n[system]\nf = 1\n[box]\nx = 0\n", 'box', 6),
    ("x = 1\n", None, 1),
])
def test_errors_name_section_and_line(text, section, line):
    with pytest.raises(SpecFileError) as info:
        loads(text)
    assert info.value.section == section
    if line is not None:
        assert info.value.line == line


def test_constraints_without_forces_are_rejected():
    spec = loads("[vars]\nstate = x\n[system]\nf = 1\n[constraints]\nphi = x\n")
    with pytest.raises(SpecFileError):
        spec.nonholonomic()


def test_parse_assignments():
    assert parse_assignments("x=0.5, y'=sqrt(2)") == {'x': '0.5', "y'": 'sqrt(2)'}
    assert parse_assignments("") == {}
    with pytest.raises(SpecFileError):
        parse_assignments("x")


def test_unknown_coordinate_in_point():
    spec = loads(SYSTEM)
    with pytest.raises(SpecFileError):
        spec.point({'z': 1.0})
    assert np.all(np.isfinite(spec.point()))


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_scenarios_keep_their_names(name):
    assert SCENARIOS[name].load().name == name
