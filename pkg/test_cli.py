import json
import tempfile

import numpy as np
import pytest
from numpy.testing import assert_allclose

import main
from scripts import linalg
from scripts.commands import RunConfig
from scripts.scenarios import SCENARIOS, run_self_test


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    monkeypatch.setattr(tempfile, "tempdir", str(tmp_path))
    yield
    linalg.configure_tolerances()


def _run(capsys, *argv):
    status = main.main(["--quiet", *argv])
    return status, capsys.readouterr().out


def test_analyze_example1(capsys):
    status, out = _run(capsys, "analyze", "--scenario", "example1", "--at", "x=0.5,y=2")
    assert status == main.EXIT_OK
    document = json.loads(out)
    point = document["points"][0]
    nh = point["nonholonomic"]
    assert nh["regular"] and nh["subspace_test_agrees"] and nh["rank_D"] == 1
    assert_allclose(nh["X"], [0.0, 0.0], atol=1e-12)
    assert_allclose(nh["multipliers"], [-2.0])
    assert nh["projector"]["idempotence"] <= 1e-12
    assert document["analysis"]["kind"] == "system"
    assert document["analysis"]["scenario"] == "example1"


def test_analyze_lifts_points_onto_the_constraint(capsys):
    status, out = _run(capsys, "analyze", "--scenario", "rosenberg", "--at", "x'=2,y'=3,z'=0")
    assert status == main.EXIT_OK
    document = json.loads(out)
    assert document["analysis"]["scenario"] == "rosenberg"
    point = document["points"][0]
    assert point["point"]["z'"] == pytest.approx(2.0)
    assert_allclose(point["nonholonomic"]["X"], [2.0, 3.0, 2.0, -3.0, 0.0, 3.0], atol=1e-9)
    assert point["lagrangian"]["regular"]


def test_analyze_singular_lagrangian_with_potential(capsys):
    status, out = _run(capsys, "analyze", "--scenario", "relparticle-L1", "--param", "U=k*q1,k=1")
    assert status == main.EXIT_OK
    point = json.loads(out)["points"][0]
    assert not point["base"]["consistent"]
    assert point["lagrangian"]["omega_rank"] == 6
    assert point["nonholonomic"]["path"] == "singular-base"


def test_reports_are_byte_identical(capsys):
    args = ("check-symmetry", "--scenario", "example1", "--samples", "20")
    first = _run(capsys, *args)
    second = _run(capsys, *args)
    assert first == second
    assert first[0] == main.EXIT_OK
    assert json.loads(first[1])["scenario"] == "example1"


def test_check_symmetry_reports_second_order_flow(capsys, tmp_path):
    spec = tmp_path / "quadratic.lss"
    spec.write_text("[vars]\nstate = x, y\n[system]\nf = x^2, y\n[symmetry]\nV = x^2, 0\nlift = tangent\n"
                    "[box]\nx = -1, 1\ny = -1, 1\n")
    status, out = _run(capsys, "check-symmetry", "--spec", str(spec), "--samples", "50")
    assert status == main.EXIT_OK
    document = json.loads(out)
    assert document["scenario"] == "quadratic"
    assert document["base"]["symmetry"]
    residuals = document["flow_residuals"]
    assert residuals[0] > residuals[1] > residuals[2] > 0.0
    assert 1.8 <= document["flow_slope"] <= 2.2


def test_simulate_writes_csv(capsys, tmp_path):
    target = tmp_path / "traj.csv"
    status, _ = _run(capsys, "simulate", "--scenario", "rosenberg", "--t1", "0.01", "--dt", "1e-3",
                     "--out", str(target))
    assert status == main.EXIT_OK
    lines = target.read_text().splitlines()
    assert lines[0] == "t,x1,x2,x3,x4,x5,x6,u1,drift"
    assert len(lines) == 12
    row = np.array([float(v) for v in lines[1].split(",")])
    assert_allclose(row[1:7], [0.0, 1.0, 0.0, 2.0, 3.0, 2.0])
    assert row[7] == pytest.approx(-3.0)


@pytest.mark.parametrize("dt", ["0", "-1e-3"])
def test_simulate_rejects_non_positive_step(capsys, dt):
    status, _ = _run(capsys, "simulate", "--scenario", "rosenberg", "--t1", "1", f"--dt={dt}")
    assert status == main.EXIT_USAGE


def test_check_constant(capsys):
    status, out = _run(capsys, "check-constant", "--scenario", "rosenberg", "--name", "px", "--samples", "30")
    assert status == main.EXIT_OK
    assert json.loads(out)["constants"]["px"]["constrained_conserved"]

    status, out = _run(capsys, "check-constant", "--scenario", "rosenberg", "--expr", "zd=z'",
                       "--name", "zd", "--samples", "30")
    assert status == main.EXIT_CHECK_FAILED
    result = json.loads(out)["constants"]["zd"]
    assert result["base_conserved"] and not result["constrained_conserved"]


def test_scenario_list(capsys):
    status, out = _run(capsys, "scenario", "--list")
    assert status == main.EXIT_OK
    names = [line.split("\t")[0] for line in out.splitlines()]
    assert names == ["example1", "relparticle-L1", "relparticle-L2", "rosenberg"]


def test_usage_errors(capsys):
    assert _run(capsys, "analyze", "--scenario", "nowhere")[0] == main.EXIT_USAGE
    assert _run(capsys, "analyze", "--scenario", "example1", "--at", "w=1")[0] == main.EXIT_USAGE
    assert _run(capsys)[0] == main.EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main.main(["analyze"])
    assert info.value.code == main.EXIT_USAGE


def test_spec_file_errors(capsys, tmp_path):
    broken = tmp_path / "broken.lss"
    broken.write_text("[vars]\nstate = x\n[system]\nf = 1 +\n")
    assert _run(capsys, "analyze", "--spec", str(broken))[0] == main.EXIT_USAGE
    assert _run(capsys, "analyze", "--spec", str(tmp_path / "missing.lss"))[0] == main.EXIT_USAGE


def test_evaluation_error(capsys, tmp_path):
    spec = tmp_path / "log.lss"
    spec.write_text("[vars]\nstate = x\n[system]\nf = log(x)\n[initial]\nx = -1\n")
    assert _run(capsys, "analyze", "--spec", str(spec))[0] == main.EXIT_EVALUATION


def test_settings_round_trip(capsys):
    assert _run(capsys, "settings", "--set", "sample_count=25")[0] == main.EXIT_OK
    status, out = _run(capsys, "settings", "--show")
    assert status == main.EXIT_OK
    assert json.loads(out)["sample_count"] == 25
    assert _run(capsys, "settings", "--set", "colour=blue")[0] == main.EXIT_USAGE


def test_self_test_of_every_scenario():
    outcomes = run_self_test(RunConfig())
    assert {outcome.scenario for outcome in outcomes} == set(SCENARIOS)
    failed = [outcome for outcome in outcomes if not outcome.passed]
    assert not failed, failed
