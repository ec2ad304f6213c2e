"""
Scenario files, end-to-end planning, verification and trajectory export.

A scenario is a TOML file with the sections ``orbit``, ``target``,
``servicer``, ``initial``, ``problem``, ``integrator``, ``solver`` and
``tolerances``; the bundled ``table1_tumbling.toml`` is the reference example.
Only ``orbit``, ``target``, ``servicer`` and ``initial`` are mandatory.
"""

import dataclasses
import json
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import dynamics as dyn
from . import integrator as itg
from . import transcription as tr
from .dynamics import IDX_LM, IDX_LV, IDX_QS, IDX_QT, N_CONTROL, N_STATE
from .errors import DimensionMismatch, ParseError, ValidationError
from .nlp import SQPSettings, solve
from .quat import normalize, norm_deviation

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

QUAT_INPUT_TOL = 1e-3
BUNDLED = ("table1_tumbling",)

TRAJECTORY_COLUMNS = (
    ("t",) + dyn.STATE_NAMES + dyn.CONTROL_NAMES + ("vB1", "vB2", "vB3")
)
DECISION_COLUMNS = ("interval", "t_start", "t_end") + dyn.CONTROL_NAMES
_FMT = "%.16e"


@dataclass(frozen=True)
class Tolerances:
    """Pass/fail thresholds applied by :func:`verify`."""

    docking_position: float = 1e-6
    docking_velocity: float = 1e-6
    constraint: float = 1e-6
    quat_norm_drift: float = 1e-8


@dataclass(frozen=True)
class Scenario:
    name: str
    params: dyn.SystemParams
    x0: np.ndarray
    weights: tr.Weights = tr.Weights()
    v_max: float = 0.1
    m_max: float = 1.0
    t_max: float = 420.0
    N: int = 210
    min_separation: Optional[float] = None
    separation_nodes: str = "grid"
    integrator: itg.IntegratorSettings = field(default_factory=itg.IntegratorSettings)
    solver: SQPSettings = SQPSettings()
    tolerances: Tolerances = Tolerances()
    description: str = ""

    def to_ocp(self):
        return tr.OCPDefinition(
            self.x0, self.params, self.weights, self.v_max, self.m_max, self.t_max, self.N,
            self.min_separation, self.integrator, self.separation_nodes)

    def with_overrides(self, N=None, t_max=None):
        """Copy with a different grid size and/or maneuver time limit."""
        changes = {}
        if N is not None:
            changes["N"] = int(N)
        if t_max is not None:
            changes["t_max"] = float(t_max)
        out = dataclasses.replace(self, **changes)
        _validate_problem(out.N, out.t_max, out.v_max, out.m_max, out.min_separation)
        return out


# --------------------------------------------------------------------------- loading

_SCHEMA = {
    "": {"name": str, "description": str},
    "orbit": {"a": float, "GM": float},
    "target": {"J": "vec3", "M": float, "d": "vec3", "r": float},
    "servicer": {"J": "vec3", "M": float, "d": "vec3", "r": float},
    "initial": {"rho": "vec3", "rho_dot": "vec3", "wS": "vec3", "qS": "vec4", "wT": "vec3", "qT": "vec4"},
    "problem": {"N": int, "t_max": float, "v_max": float, "m_max": float, "w_t": float, "w_v": float,
                "w_m": float, "min_separation": float, "separation_nodes": str},
    "integrator": {f.name: f.type for f in dataclasses.fields(itg.IntegratorSettings)},
    "solver": {f.name: f.type for f in dataclasses.fields(SQPSettings)},
    "tolerances": {f.name: float for f in dataclasses.fields(Tolerances)},
}
_REQUIRED = {
    "orbit": ("a", "GM"),
    "target": ("J", "M", "d", "r"),
    "servicer": ("J", "M", "d", "r"),
    "initial": ("rho", "qS", "wT", "qT"),
}


def bundled_scenario(name):
    """Path of a scenario shipped with the package."""
    if name not in BUNDLED:
        raise FileNotFoundError(f"no bundled scenario {name!r}; available: {', '.join(BUNDLED)}")
    return Path(str(resources.files("tumbledock") / "scenarios" / f"{name}.toml"))


def _line_of(text, section, key):
    current = ""
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return i
    return None


def _coerce(value, kind, where, line):
    def fail(expected):
        raise ParseError(f"expected {expected}, got {value!r}", where, line)

    if kind in ("vec3", "vec4"):
        size = int(kind[-1])
        if (not isinstance(value, list) or len(value) != size
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
            fail(f"a list of {size} numbers")
        return np.array(value, dtype=float)
    if kind in (float, "float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail("a number")
        return float(value)
    if kind in (int, "int"):
        if isinstance(value, bool) or not isinstance(value, int):
            fail("an integer")
        return value
    if kind in (bool, "bool"):
        if not isinstance(value, bool):
            fail("true or false")
        return value
    if kind in (str, "str"):
        if not isinstance(value, str):
            fail("a string")
        return value
    # Optional[float]
    if value is None or isinstance(value, bool) or not isinstance(value, (int, float)):
        fail("a number")
    return float(value)


def _parse(text):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(f"invalid TOML: {exc}", None, int(m.group(1)) if m else None) from None
    out = {sec: {} for sec in _SCHEMA}
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in _SCHEMA or key == "":
                raise ParseError("unknown section", key, _section_line(text, key))
            for sub, v in value.items():
                where = f"{key}.{sub}"
                line = _line_of(text, key, sub)
                if sub not in _SCHEMA[key]:
                    raise ParseError("unknown field", where, line)
                out[key][sub] = _coerce(v, _SCHEMA[key][sub], where, line)
        else:
            if key not in _SCHEMA[""]:
                raise ParseError("unknown field", key, _line_of(text, "", key))
            out[""][key] = _coerce(value, _SCHEMA[""][key], key, _line_of(text, "", key))
    for sec, keys in _REQUIRED.items():
        for key in keys:
            if key not in out[sec]:
                raise ParseError("missing required field", f"{sec}.{key}", _section_line(text, sec))
    return out


def _section_line(text, section):
    for i, raw in enumerate(text.splitlines(), start=1):
        if raw.strip().startswith(f"[{section}]"):
            return i
    return None


def _validate_problem(N, t_max, v_max, m_max, min_separation):
    if N < 1:
        raise ValidationError("discretization", f"N must be >= 1, got {N}")
    if not t_max >= tr.TF_MIN:
        raise ValidationError("t_max", f"t_max must be at least {tr.TF_MIN} s")
    if not (v_max > 0 and m_max > 0):
        raise ValidationError("control_bounds", "v_max and m_max must be positive")
    if min_separation is not None and not min_separation > 0:
        raise ValidationError("min_separation", "min_separation must be positive")


def _craft(sec, name):
    if not sec["r"] > 0:
        raise ValidationError("safety_radius", f"{name} safety radius must be positive, got {sec['r']}")
    if not sec["M"] > 0:
        raise ValidationError("mass", f"{name} mass must be positive")
    if not np.all(sec["J"] > 0):
        raise ValidationError("inertia", f"{name} principal inertias must be positive")
    if not np.linalg.norm(sec["d"]) > sec["r"]:
        raise ValidationError("docking_point", f"{name} docking point must lie outside its safety radius")
    return dyn.SpacecraftParams(sec["J"], sec["M"], sec["d"], sec["r"])


def _quaternion(q, name):
    if not abs(norm_deviation(q)) <= QUAT_INPUT_TOL:
        raise ValidationError("quaternion_norm", f"{name} norm deviates from 1 by more than {QUAT_INPUT_TOL}")
    return normalize(q)


def scenario_from_text(text, default_name="scenario"):
    """Parse and validate scenario text; see :func:`load_scenario`."""
    cfg = _parse(text)
    orbit = cfg["orbit"]
    if not (orbit["a"] > 0 and orbit["GM"] > 0):
        raise ValidationError("orbit", "orbit radius and GM must be positive")
    params = dyn.SystemParams(
        _craft(cfg["servicer"], "servicer"), _craft(cfg["target"], "target"),
        dyn.OrbitParams(orbit["a"], orbit["GM"]))

    ini = cfg["initial"]
    x0 = np.zeros(N_STATE)
    x0[dyn.IDX_POS] = ini["rho"]
    x0[dyn.IDX_VEL] = ini.get("rho_dot", np.zeros(3))
    x0[dyn.IDX_WS] = ini.get("wS", np.zeros(3))
    x0[IDX_QS] = _quaternion(ini["qS"], "servicer quaternion")
    x0[dyn.IDX_WT] = ini["wT"]
    x0[IDX_QT] = _quaternion(ini["qT"], "target quaternion")
    if not np.all(np.isfinite(x0)):
        raise ValidationError("initial_state", "initial state must be finite")

    prob = cfg["problem"]
    defaults = Scenario.__dataclass_fields__
    N = prob.get("N", defaults["N"].default)
    t_max = prob.get("t_max", defaults["t_max"].default)
    v_max = prob.get("v_max", defaults["v_max"].default)
    m_max = prob.get("m_max", defaults["m_max"].default)
    min_sep = prob.get("min_separation")
    _validate_problem(N, t_max, v_max, m_max, min_sep)
    sep_nodes = prob.get("separation_nodes", "grid")
    if sep_nodes not in ("grid", "substeps"):
        raise ValidationError("separation_nodes", f"separation_nodes must be 'grid' or 'substeps', got {sep_nodes!r}")
    sep = params.servicer.safety_radius + params.target.safety_radius if min_sep is None else min_sep
    if np.linalg.norm(x0[dyn.IDX_POS]) < sep:
        raise ValidationError("initial_separation", f"initial separation below {sep} m")
    try:
        weights = tr.Weights(prob.get("w_t", 0.0), prob.get("w_v", 1.0), prob.get("w_m", 1.0))
    except ValueError as exc:
        raise ValidationError("weights", str(exc)) from None
    try:
        integrator = itg.IntegratorSettings(**cfg["integrator"])
    except ValueError as exc:
        raise ValidationError("integrator", str(exc)) from None
    try:
        solver = SQPSettings(**cfg["solver"])
    except ValueError as exc:
        raise ValidationError("solver", str(exc)) from None
    tol = Tolerances(**cfg["tolerances"])
    if not all(v > 0 for v in dataclasses.astuple(tol)):
        raise ValidationError("tolerances", "tolerances must be positive")

    return Scenario(
        name=cfg[""].get("name", default_name), params=params, x0=x0, weights=weights,
        v_max=v_max, m_max=m_max, t_max=t_max, N=N, min_separation=min_sep,
        separation_nodes=sep_nodes, integrator=integrator, solver=solver, tolerances=tol, description=cfg[""].get("description", ""))


def load_scenario(path):
    """Load and validate a scenario file.

    ``path`` may also be the name of a bundled scenario.  Initial quaternions
    within 1e-3 of unit norm are renormalized; the mean motion follows from
    ``GM`` and ``a``.

    Raises
    ------
    ParseError
        Malformed TOML, unknown or missing fields, wrong value types.
    ValidationError
        A named rule fails (e.g. ``"safety_radius"``, ``"docking_point"``).
    OSError
        The file cannot be read.
    """
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        p = bundled_scenario(str(path))
    return scenario_from_text(p.read_text(encoding="utf-8"), default_name=p.stem)


# --------------------------------------------------------------------------- verification

@dataclass
class VerificationReport:
    """Residuals evaluated directly on a trajectory, with pass/fail flags.

    ``kkt`` summarizes the solver report when one is supplied; ``flags`` maps
    each check to a boolean.
    """

    docking_pos_residual_norm: float
    docking_vel_residual_norm: float
    min_separation: float
    max_thrust_violation: float
    max_torque_violation: float
    max_quat_norm_drift: float
    tf: float
    objective: float
    kkt: Optional[dict] = None
    flags: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.flags.values())

    def to_dict(self):
        return dataclasses.asdict(self) | {"passed": self.passed}


def _kkt_summary(report):
    return {
        "status": report.status,
        "iterations": int(report.iterations),
        "stationarity": float(report.kkt_stationarity),
        "max_constraint_violation": float(report.max_constraint_violation),
        "complementarity": float(report.complementarity),
        "objective": float(report.objective),
        "message": report.message,
    }


def verify(trajectory, scenario, solve_report=None):
    """Check a trajectory against the scenario at every stored node.

    Uses only dynamics-module operations on the stored states and node
    controls, so any trajectory (solver output, hand-built, or read back from
    CSV) can be checked.  Docking residuals are taken at the last node.
    """
    X = np.asarray(trajectory.states, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] != N_STATE:
        raise DimensionMismatch("trajectory must hold at least one 22-element state")
    U = trajectory.node_controls()
    sp = scenario.params
    xf = X[-1]
    pos = float(np.linalg.norm(dyn._docking_position(xf, sp.servicer.docking_point, sp.target.docking_point)))
    vel = float(np.linalg.norm(dyn._docking_velocity(xf, sp.servicer.docking_point, sp.target.docking_point)))
    sep = float(np.min(dyn.separation_distance(X)))
    qs, qt = X[:, IDX_QS], X[:, IDX_QT]
    drift = float(max(np.max(np.abs(norm_deviation(qs))), np.max(np.abs(norm_deviation(qt)))))
    body = dyn.body_frame_thrust(qs / np.linalg.norm(qs, axis=1, keepdims=True), U[:, :3])
    thrust = float(max(0.0, np.max(np.abs(body)) - scenario.v_max))
    torque = float(max(0.0, np.max(np.abs(U[:, 3:])) - scenario.m_max))
    tf = float(trajectory.times[-1])
    w = scenario.weights
    objective = float(w.w_t * tf + w.w_v * xf[IDX_LV] + w.w_m * xf[IDX_LM])

    min_sep = scenario.to_ocp().min_separation
    tol = scenario.tolerances
    flags = {
        "docking_position": pos <= tol.docking_position,
        "docking_velocity": vel <= tol.docking_velocity,
        "separation": sep >= min_sep - tol.constraint,
        "thrust": thrust <= tol.constraint,
        "torque": torque <= tol.constraint,
        "quaternion_norm": drift <= tol.quat_norm_drift,
        "final_time": tf <= scenario.t_max + tol.constraint,
    }
    kkt = None
    if solve_report is not None:
        kkt = _kkt_summary(solve_report)
        flags["converged"] = solve_report.converged
    return VerificationReport(pos, vel, sep, thrust, torque, drift, tf, objective, kkt, flags)


def write_report(report, path):
    """Write a verification report as JSON."""
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------- planning

def resample_controls(decision, N):
    """Zero-order-hold resampling of a decision vector onto ``N`` intervals.

    Each new interval takes the control of the old interval containing its
    midpoint; ``tf`` is kept.
    """
    old = decision.controls
    mid = (np.arange(N) + 0.5) / N
    idx = np.minimum((mid * len(old)).astype(int), len(old) - 1)
    return tr.DecisionVector(old[idx].copy(), decision.tf)


def plan(scenario, initial=None):
    """Solve the docking problem of ``scenario`` and verify the result.

    Parameters
    ----------
    scenario : Scenario
    initial : DecisionVector, optional
        Starting point; resampled when its grid differs from ``scenario.N``.
        Defaults to zero controls with ``tf = t_max``.

    Returns
    -------
    (DecisionVector, Trajectory, SolveReport, VerificationReport)
        Non-converged solves are returned as well; check ``SolveReport.status``.
    """
    ocp = scenario.to_ocp()
    if initial is None:
        initial = tr.initial_guess(ocp)
    elif initial.N != ocp.N:
        initial = resample_controls(initial, ocp.N)
    z0 = initial.to_array()
    z0[-1] = min(max(z0[-1], tr.TF_MIN), ocp.t_max)
    z, report = solve(tr.to_nlp(ocp), z0, scenario.solver)
    decision = tr.DecisionVector.from_array(z, ocp.N)
    traj = itg.propagate(ocp.x0, decision.controls, decision.tf, ocp.params, ocp.integrator)
    return decision, traj, report, verify(traj, scenario, report)


def propagate_scenario(scenario, decision=None):
    """Propagate the scenario under ``decision`` (zero controls over ``t_max`` by default)."""
    ocp = scenario.to_ocp()
    if decision is None:
        decision = tr.initial_guess(ocp)
    return itg.propagate(ocp.x0, decision.controls, decision.tf, ocp.params, ocp.integrator)


# --------------------------------------------------------------------------- files

def export_trajectory(trajectory, controls, path):
    """Write one CSV row per node (header in ``TRAJECTORY_COLUMNS``).

    ``controls`` is the ZOH sequence ``(N, 6)``; each row carries the control
    of the interval containing its time and the matching body-frame thrust.
    """
    controls = np.atleast_2d(np.asarray(trajectory.controls if controls is None else controls, float))
    X = np.asarray(trajectory.states, dtype=float)
    k = np.arange(len(X)) // trajectory.substeps
    U = controls[np.minimum(k, len(controls) - 1)]
    body = dyn.body_frame_thrust(X[:, IDX_QS] / np.linalg.norm(X[:, IDX_QS], axis=1, keepdims=True), U[:, :3])
    table = np.column_stack([trajectory.times, X, U, body])
    np.savetxt(path, table, fmt=_FMT, delimiter=",", header=",".join(TRAJECTORY_COLUMNS), comments="")


def read_trajectory(path, substeps=1):
    """Read a CSV written by :func:`export_trajectory`.

    Node controls are recovered from the rows; with ``substeps`` matching the
    export, the ZOH sequence is recovered exactly.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != TRAJECTORY_COLUMNS:
        raise ParseError("unexpected trajectory header", "header", 1)
    try:
        table = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, dtype=float))
    except ValueError as exc:
        raise ParseError(f"malformed trajectory row: {exc}", None, None) from None
    if table.shape[1] != len(TRAJECTORY_COLUMNS):
        raise ParseError(f"expected {len(TRAJECTORY_COLUMNS)} columns, got {table.shape[1]}")
    times, X = table[:, 0], table[:, 1:1 + N_STATE]
    U = table[:, 1 + N_STATE:1 + N_STATE + N_CONTROL]
    K = len(table)
    sub = int(substeps) if K > 1 and (K - 1) % int(substeps) == 0 else 1
    controls = U[0:max(K - 1, 1):sub].copy()
    lam = X[:, [IDX_QT.start + 3, IDX_QS.start + 3]].copy()
    return itg.Trajectory(times, X, lam, controls, sub)


def export_decision(decision, path):
    """Write the ZOH controls with their interval times (header ``DECISION_COLUMNS``)."""
    N = decision.N
    edges = np.linspace(0.0, decision.tf, N + 1)
    table = np.column_stack([np.arange(N), edges[:-1], edges[1:], decision.controls])
    fmt = ["%d"] + [_FMT] * (table.shape[1] - 1)
    np.savetxt(path, table, fmt=fmt, delimiter=",", header=",".join(DECISION_COLUMNS), comments="")


def read_decision(path):
    """Read a decision file written by :func:`export_decision`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != DECISION_COLUMNS:
        raise ParseError("unexpected decision header", "header", 1)
    try:
        table = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, dtype=float))
    except ValueError as exc:
        raise ParseError(f"malformed decision row: {exc}") from None
    if table.shape[1] != len(DECISION_COLUMNS) or len(table) == 0:
        raise ParseError(f"expected {len(DECISION_COLUMNS)} columns")
    return tr.DecisionVector(table[:, 3:].copy(), float(table[-1, 2]))
