import json

import numpy as np
import pytest

from tumbledock import dynamics as dyn
from tumbledock import integrator as itg
from tumbledock import scenario as sc
from tumbledock import transcription as tr
from tumbledock.cli import main
from tumbledock.errors import ParseError, ValidationError

BUNDLED_TEXT = sc.bundled_scenario("table1_tumbling").read_text()


@pytest.fixture(scope="module")
def table1():
    return sc.load_scenario("table1_tumbling")


def edited(old, new):
    assert old in BUNDLED_TEXT
    return BUNDLED_TEXT.replace(old, new, 1)


def docked_scenario(N=4):
    # target at rest, servicer turned half a revolution about z on the target's +y side
    text = edited("rho = [0.0, -10.0, 0.0]", "rho = [0.0, 2.02, 0.0]")
    text = text.replace("qS = [0.0, 0.0, 0.0, 1.0]", "qS = [0.0, 0.0, 1.0, 0.0]")
    text = text.replace("wT = [0.0, 0.0349, 0.017453]", "wT = [0.0, 0.0, 0.0]")
    text = text.replace("qT = [-0.05, 0.0, 0.0, 0.99875]", "qT = [0.0, 0.0, 0.0, 1.0]")
    return sc.scenario_from_text(text).with_overrides(N=N, t_max=60.0)


def test_bundled_constants(table1):
    p = table1.params
    assert table1.name == "table1_tumbling"
    assert p.orbit.a == 7071000.0 and p.orbit.gm == 3.98e14
    assert p.orbit.n == pytest.approx(np.sqrt(3.98e14 / 7071000.0**3), rel=1e-15)
    for craft in (p.servicer, p.target):
        assert craft.mass == 100.0 and craft.safety_radius == 1.0
        np.testing.assert_array_equal(craft.inertia, [1000.0, 2000.0, 1000.0])
        np.testing.assert_array_equal(craft.docking_point, [0.0, 1.01, 0.0])
    assert (table1.v_max, table1.m_max, table1.t_max, table1.N) == (0.1, 1.0, 420.0, 210)
    assert table1.weights == tr.Weights(0.0, 1.0, 1.0)


def test_bundled_initial_state(table1):
    x = table1.x0
    np.testing.assert_array_equal(x[dyn.IDX_POS], [0.0, -10.0, 0.0])
    np.testing.assert_array_equal(x[dyn.IDX_VEL], 0.0)
    np.testing.assert_array_equal(x[dyn.IDX_WS], 0.0)
    np.testing.assert_array_equal(x[dyn.IDX_QS], [0.0, 0.0, 0.0, 1.0])
    np.testing.assert_array_equal(x[dyn.IDX_WT], [0.0, 0.0349, 0.017453])
    q = np.array([-0.05, 0.0, 0.0, 0.99875])
    np.testing.assert_allclose(x[dyn.IDX_QT], q / np.linalg.norm(q), rtol=0, atol=1e-15)
    assert abs(np.linalg.norm(x[dyn.IDX_QT]) - 1.0) <= 1e-15


def test_load_from_path(tmp_path, table1):
    f = tmp_path / "copy.toml"
    f.write_text(BUNDLED_TEXT)
    s = sc.load_scenario(f)
    np.testing.assert_array_equal(s.x0, table1.x0)
    assert s.params.orbit == table1.params.orbit and s.name == table1.name


def test_scenario_settings_sections(table1):
    assert table1.integrator == itg.IntegratorSettings()
    assert table1.solver.gradient == "central-fd"
    assert table1.tolerances == sc.Tolerances()
    assert table1.separation_nodes == "substeps"
    assert table1.to_ocp().stride == table1.integrator.substeps_per_interval


@pytest.mark.parametrize("old,new,rule", [
    ("r = 1.0", "r = -1.0", "safety_radius"),
    ("M = 100.0", "M = 0.0", "mass"),
    ("J = [1000.0, 2000.0, 1000.0]", "J = [1000.0, -2000.0, 1000.0]", "inertia"),
    ("d = [0.0, 1.01, 0.0]", "d = [0.0, 0.99, 0.0]", "docking_point"),
    ("qT = [-0.05, 0.0, 0.0, 0.99875]", "qT = [-0.05, 0.0, 0.0, 1.01]", "quaternion_norm"),
    ("a = 7071000.0", "a = -1.0", "orbit"),
    ("N = 210", "N = 0", "discretization"),
    ("t_max = 420.0", "t_max = 0.5", "t_max"),
    ("v_max = 0.1", "v_max = 0.0", "control_bounds"),
    ("w_v = 1.0", "w_v = -1.0", "weights"),
    ("rho = [0.0, -10.0, 0.0]", "rho = [0.0, -1.5, 0.0]", "initial_separation"),
    ('formulation = "dae"', 'formulation = "magic"', "integrator"),
    ('gradient = "central-fd"', 'gradient = "exact"', "solver"),
    ("constraint = 1e-6", "constraint = 0.0", "tolerances"),
    ('separation_nodes = "substeps"', 'separation_nodes = "everywhere"', "separation_nodes"),
])
def test_validation_rules(old, new, rule):
    with pytest.raises(ValidationError) as err:
        sc.scenario_from_text(edited(old, new))
    assert err.value.rule == rule


def test_quaternion_within_input_tolerance_is_renormalized():
    s = sc.scenario_from_text(edited("qS = [0.0, 0.0, 0.0, 1.0]", "qS = [0.0, 0.0, 0.0, 1.0009]"))
    np.testing.assert_array_equal(s.x0[dyn.IDX_QS], [0.0, 0.0, 0.0, 1.0])


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as err:
        sc.scenario_from_text(edited("M = 100.0", "M = = 100.0"))
    assert err.value.line == BUNDLED_TEXT.splitlines().index("M = 100.0") + 1


@pytest.mark.parametrize("old,new,fld", [
    ("M = 100.0", 'M = "heavy"', "target.M"),
    ("r = 1.0", "radius = 1.0", "target.radius"),
    ("d = [0.0, 1.01, 0.0]", "d = [0.0, 1.01]", "target.d"),
    ("N = 210", "N = 210.5", "problem.N"),
])
def test_parse_error_reports_field(old, new, fld):
    with pytest.raises(ParseError) as err:
        sc.scenario_from_text(edited(old, new))
    assert err.value.field == fld
    assert err.value.line == BUNDLED_TEXT.splitlines().index(old) + 1


def test_missing_required_field():
    text = BUNDLED_TEXT.replace("GM = 3.98e14\n", "")
    with pytest.raises(ParseError) as err:
        sc.scenario_from_text(text)
    assert err.value.field == "orbit.GM"


def test_unknown_section_and_missing_file(tmp_path):
    with pytest.raises(ParseError) as err:
        sc.scenario_from_text(BUNDLED_TEXT + "\n[extras]\nx = 1\n")
    assert err.value.field == "extras"
    with pytest.raises(OSError):
        sc.load_scenario(tmp_path / "missing.toml")


def test_overrides(table1):
    s = table1.with_overrides(N=50, t_max=300.0)
    assert (s.N, s.t_max) == (50, 300.0) and table1.N == 210
    assert s.to_ocp().n_variables == 301
    with pytest.raises(ValidationError):
        table1.with_overrides(N=0)


def test_verify_uncontrolled(table1):
    # V-bar start is an HCW equilibrium: the servicer never moves
    traj = sc.propagate_scenario(table1.with_overrides(N=20))
    rep = sc.verify(traj, table1)
    assert rep.min_separation == pytest.approx(10.0, abs=1e-9)
    xf = traj.states[-1]
    oracle = np.linalg.norm(dyn.docking_position_residual(xf, table1.params.servicer.docking_point,
                                                          table1.params.target.docking_point))
    assert rep.docking_pos_residual_norm == oracle
    assert rep.max_quat_norm_drift <= 1e-8
    assert rep.objective == 0.0 and rep.tf == 420.0
    assert not rep.flags["docking_position"] and rep.flags["separation"]
    assert not rep.passed


def test_verify_initial_node_residual(table1):
    # single-node trajectory at t = 0
    x = table1.x0[None].copy()
    traj = itg.Trajectory(np.zeros(1), x, np.zeros((1, 2)), np.zeros((1, 6)), 1)
    rep = sc.verify(traj, table1)
    assert rep.docking_pos_residual_norm == pytest.approx(np.linalg.norm([0.0, -9.99495, 0.10087]), abs=1e-4)


def test_verify_docked_state():
    s = docked_scenario()
    traj = sc.propagate_scenario(s)
    rep = sc.verify(traj, s)
    assert rep.docking_pos_residual_norm == 0.0 and rep.docking_vel_residual_norm == 0.0
    assert rep.passed


def test_verify_flags_bound_violations(table1):
    s = table1.with_overrides(N=4, t_max=40.0)
    u = np.zeros((4, 6))
    u[1, 0] = 0.15
    u[2, 5] = -1.5
    traj = sc.propagate_scenario(s, tr.DecisionVector(u, 40.0))
    rep = sc.verify(traj, s)
    assert rep.max_thrust_violation == pytest.approx(0.05, abs=1e-12)
    assert rep.max_torque_violation == pytest.approx(0.5, abs=1e-12)
    assert not rep.flags["thrust"] and not rep.flags["torque"]


def test_verify_objective_matches_transcription(table1):
    s = table1.with_overrides(N=5, t_max=100.0)
    rng = np.random.default_rng(0)
    dv = tr.DecisionVector(rng.uniform(-0.05, 0.05, (5, 6)), 80.0)
    rep = sc.verify(sc.propagate_scenario(s, dv), s)
    assert rep.objective == pytest.approx(tr.evaluate_objective(dv, s.to_ocp()), rel=1e-12)


def test_plan_already_docked():
    dv, traj, solve_report, rep = sc.plan(docked_scenario())
    assert solve_report.converged
    assert abs(rep.objective) <= 1e-10
    assert rep.passed and rep.kkt["status"] == "converged"


def test_plan_returns_unconverged_results(table1):
    s = table1.with_overrides(N=3)
    s = type(s)(**{**s.__dict__, "solver": sc.SQPSettings(max_iterations=1)})
    dv, traj, solve_report, rep = sc.plan(s)
    assert solve_report.status == "max_iter"
    assert dv.N == 3 and len(traj.times) == 3 * s.integrator.substeps_per_interval + 1
    assert not rep.passed and rep.kkt["status"] == "max_iter"


def test_export_schema_and_roundtrip(tmp_path, table1):
    s = table1.with_overrides(N=1, t_max=10.0)
    traj = sc.propagate_scenario(s, tr.DecisionVector([[0.01, -0.02, 0.03, 0.1, 0.0, -0.1]], 10.0))
    path = tmp_path / "t.csv"
    sc.export_trajectory(traj, traj.controls, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1 + 1 + s.integrator.substeps_per_interval
    assert len(lines[0].split(",")) == 32 == len(sc.TRAJECTORY_COLUMNS)
    back = sc.read_trajectory(path, s.integrator.substeps_per_interval)
    np.testing.assert_array_equal(back.states, traj.states)
    np.testing.assert_array_equal(back.times, traj.times)
    np.testing.assert_array_equal(back.controls, traj.controls)
    row = np.array(lines[1].split(","), dtype=float)
    np.testing.assert_array_equal(row[29:], dyn.body_frame_thrust(traj.states[0, dyn.IDX_QS], row[23:26]))


def test_export_node_controls_follow_intervals(tmp_path, table1):
    s = table1.with_overrides(N=3, t_max=30.0)
    u = np.zeros((3, 6))
    u[:, 3] = [0.1, 0.2, 0.3]
    traj = sc.propagate_scenario(s, tr.DecisionVector(u, 30.0))
    sc.export_trajectory(traj, u, tmp_path / "t.csv")
    table = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(table[:, 26], [0.1, 0.1, 0.2, 0.2, 0.3, 0.3, 0.3])


def test_verify_readback_equals_direct(tmp_path, table1):
    s = table1.with_overrides(N=4, t_max=40.0)
    traj = sc.propagate_scenario(s, tr.DecisionVector(np.full((4, 6), 0.01), 40.0))
    sc.export_trajectory(traj, traj.controls, tmp_path / "t.csv")
    back = sc.read_trajectory(tmp_path / "t.csv", 2)
    assert sc.verify(back, s).to_dict() == sc.verify(traj, s).to_dict()


def test_read_trajectory_rejects_bad_header(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("a,b\n1,2\n")
    with pytest.raises(ParseError):
        sc.read_trajectory(f)


def test_decision_roundtrip_and_resample(tmp_path):
    rng = np.random.default_rng(1)
    dv = tr.DecisionVector(rng.normal(size=(5, 6)), 123.456)
    sc.export_decision(dv, tmp_path / "d.csv")
    back = sc.read_decision(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.controls, dv.controls)
    assert back.tf == dv.tf
    fine = sc.resample_controls(dv, 10)
    np.testing.assert_array_equal(fine.controls, np.repeat(dv.controls, 2, axis=0))
    np.testing.assert_array_equal(sc.resample_controls(fine, 5).controls, dv.controls)


def test_report_json(tmp_path, table1):
    rep = sc.verify(sc.propagate_scenario(table1.with_overrides(N=2)), table1)
    sc.write_report(rep, tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    for key in ("docking_pos_residual_norm", "docking_vel_residual_norm", "min_separation",
                "max_thrust_violation", "max_torque_violation", "max_quat_norm_drift", "kkt", "tf",
                "objective", "flags", "passed"):
        assert key in data
    assert all(np.isfinite(v) for v in data.values() if isinstance(v, float))


# --------------------------------------------------------------------------- CLI

def test_cli_propagate_and_verify(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["propagate", "table1_tumbling", "--out-dir", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"trajectory.csv", "decision.csv", "report.json"}
    capsys.readouterr()
    # an undocked trajectory fails verification
    assert main(["verify", str(out / "trajectory.csv"), "table1_tumbling"]) == 1
    report = json.loads(capsys.readouterr().out)
    assert report["min_separation"] == pytest.approx(10.0)


def test_cli_propagate_with_controls(tmp_path):
    dv = tr.DecisionVector(np.full((3, 6), 0.01), 30.0)
    sc.export_decision(dv, tmp_path / "d.csv")
    assert main(["propagate", "table1_tumbling", "--controls", str(tmp_path / "d.csv"),
                 "--out-dir", str(tmp_path)]) == 0
    assert len((tmp_path / "trajectory.csv").read_text().splitlines()) == 1 + 3 * 2 + 1


def test_cli_plan_docked(tmp_path, capsys):
    f = tmp_path / "docked.toml"
    f.write_text(edited("rho = [0.0, -10.0, 0.0]", "rho = [0.0, 2.02, 0.0]")
                 .replace("qS = [0.0, 0.0, 0.0, 1.0]", "qS = [0.0, 0.0, 1.0, 0.0]")
                 .replace("wT = [0.0, 0.0349, 0.017453]", "wT = [0.0, 0.0, 0.0]")
                 .replace("qT = [-0.05, 0.0, 0.0, 0.99875]", "qT = [0.0, 0.0, 0.0, 1.0]"))
    assert main(["plan", str(f), "--N", "3", "--tmax", "30", "--out-dir", str(tmp_path / "o")]) == 0
    assert json.loads(capsys.readouterr().out)["passed"] is True
    assert main(["verify", str(tmp_path / "o" / "trajectory.csv"), str(f)]) == 0


def test_cli_plan_failure_exit_code(tmp_path):
    f = tmp_path / "s.toml"
    f.write_text(edited('gradient = "central-fd"', 'gradient = "central-fd"\nmax_iterations = 1')
                 .replace("max_iterations = 1000\n", ""))
    assert main(["plan", str(f), "--N", "2"]) == 1


def test_cli_input_errors(tmp_path, capsys):
    f = tmp_path / "s.toml"
    f.write_text(edited("r = 1.0", "r = -1.0"))
    assert main(["plan", str(f)]) == 2
    assert "safety_radius" in capsys.readouterr().err
    assert main(["verify", str(tmp_path / "none.csv"), "table1_tumbling"]) == 2
    assert main(["propagate", str(tmp_path / "none.toml")]) == 2
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2
