import io
import time

import numpy as np
import pytest
from numpy.testing import assert_allclose

from scripts.dynamics import Trajectory, constrained_field, integrate, monitor, rk4_step, write_csv
from scripts.nonholo import project_to_manifold
from scripts.scenarios import SCENARIOS


def _riccati_error(dt):
    # xdot = -x^2, x(0) = 1 has x(t) = 1 / (1 + t)
    traj = integrate(lambda x: -x * x, [1.0], 1.0, dt)
    return abs(traj.states[-1, 0] - 0.5)


def test_rk4_is_fourth_order():
    ratio = _riccati_error(0.05) / _riccati_error(0.025)
    assert 12.0 <= ratio <= 20.0


def test_rk4_step_integrates_cubics_exactly():
    # xdot = 3 t^2 written autonomously on (t, x)
    step = rk4_step(lambda s: np.array([1.0, 3.0 * s[0] ** 2]), np.array([0.0, 0.0]), 0.5)
    assert_allclose(step, [0.5, 0.125])


def test_free_motion_is_a_straight_line():
    traj = integrate(lambda x: np.concatenate([x[3:], np.zeros(3)]), [0.0, 1.0, 0.0, 2.0, 3.0, 2.0], 1.0, 0.01)
    assert traj.steps == 100
    assert_allclose(traj.states[-1], [2.0, 4.0, 2.0, 2.0, 3.0, 2.0], atol=1e-12)
    assert_allclose(traj.times[[0, -1]], [0.0, 1.0])
    assert traj.multipliers.shape == (101, 0)
    assert not traj.drift.any()


@pytest.fixture(scope="module")
def rosenberg_run():
    spec = SCENARIOS['rosenberg'].load()
    gnh = spec.nonholonomic()
    started = time.perf_counter()
    field_at, multipliers = constrained_field(gnh)
    traj = integrate(field_at, spec.point(), 10.0, 1e-3, project=gnh.M, multipliers=multipliers,
                     variables=spec.variables)
    deviations = {name: monitor(traj, expr, name).max_abs_deviation for name, expr in spec.constants.items()}
    return spec, traj, deviations, time.perf_counter() - started


def test_rosenberg_stays_on_constraint(rosenberg_run):
    _, traj, _, _ = rosenberg_run
    assert traj.steps == 10000
    assert float(np.max(traj.drift)) <= 1e-8


def test_rosenberg_constants_of_motion(rosenberg_run):
    spec, traj, deviations, _ = rosenberg_run
    assert set(deviations) == {'vy', 'px', 'cx', 'cz'}
    for name, deviation in deviations.items():
        assert deviation <= 1e-6, name
        assert traj.monitors[name].shape == (10001,)


def test_rosenberg_run_time(rosenberg_run):
    *_, elapsed = rosenberg_run
    assert elapsed < 5.0


def test_rosenberg_multiplier_series(rosenberg_run):
    _, traj, _, _ = rosenberg_run
    y, xd, yd = traj.states[:, 1], traj.states[:, 3], traj.states[:, 4]
    assert_allclose(traj.multipliers[:, 0], -xd * yd / (1.0 + y * y), atol=1e-9)


def test_relativistic_free_motion_is_a_straight_line():
    spec = SCENARIOS['relparticle-L2'].load()
    gnh = spec.nonholonomic()
    field_at, multipliers = constrained_field(gnh)
    traj = integrate(field_at, spec.point(), 5.0, 1e-3, project=gnh.M, multipliers=multipliers,
                     variables=spec.variables)
    start = traj.states[0]
    assert_allclose(traj.states[-1], np.concatenate([start[:4] + 5.0 * start[4:], start[4:]]), atol=1e-8)
    assert monitor(traj, spec.constants['norm']).max_abs_deviation <= 1e-8
    assert_allclose(traj.multipliers, 0.0, atol=1e-9)


def test_initial_point_is_projected():
    spec = SCENARIOS['rosenberg'].load()
    gnh = spec.nonholonomic()
    field_at, _ = constrained_field(gnh)
    traj = integrate(field_at, [0.0, 1.0, 0.0, 2.0, 3.0, 2.5], 0.01, 1e-3, project=gnh.M)
    assert traj.drift[0] <= 1e-10


def test_projection_is_idempotent():
    M = SCENARIOS['rosenberg'].load().nonholonomic().M
    once = project_to_manifold(M, [0.5, -1.0, 2.0, 1.0, 0.3, 0.0])
    assert_allclose(project_to_manifold(M, once), once, atol=0.0)


@pytest.mark.parametrize("t1, dt", [(1.0, 0.0), (1.0, -1e-3), (0.0, 1e-3)])
def test_bad_grid_is_rejected(t1, dt):
    with pytest.raises(ValueError):
        integrate(lambda x: x, [1.0], t1, dt)


def test_csv_format():
    traj = Trajectory(0.0, 0.5, np.array([[1.0, 2.0], [1.0 / 3.0, 4.0]]), np.array([[0.25], [-0.5]]),
                      np.array([0.0, 1e-12]))
    out = io.StringIO()
    write_csv(traj, out)
    lines = out.getvalue().split("\n")
    assert lines[0] == "t,x1,x2,u1,drift"
    assert lines[1] == "0,1,2,0.25,0"
    fields = lines[2].split(",")
    assert fields[0] == "0.5"
    assert float(fields[1]) == 1.0 / 3.0
    assert fields[4] == "9.9999999999999998e-13"
    assert lines[-1] == ""
