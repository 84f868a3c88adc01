"""Closed-loop runs, per-tick logging and the error metrics.

Each control tick samples the base, runs the task-space controller on the
(possibly delayed) joint measurement, updates the adaptive estimator and
hands the joint servo a ramp ``q_d(t) = q_bar_d + qd_cmd (t - t_k) + q~_d``
that the plant integrates over the tick. The servo is the PD law with a
gravity model of the arm on a level base, so the tilt and the base
accelerations are disturbances for it.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import estimator as est
from . import kalman
from .base_motion import sample
from .dynamics import SimState, SimulationDiverged, gravity_torque, pd_gravity_control, step
from .kinematics import (N_JOINTS, Pose, forward_kinematics, geometric_jacobian,
                         orientation_error_vector, quat_from_axis_angle, quat_mul,
                         solve_ik)
from .mission import (MissionState, Phase, catch_condition, mission_step, restore_intervals)
from .mpc import (MpcTracker, ReferenceWindow, traditional_step, velocity_bounds)
from .qp import QpSolver, QpStatus
from .scenario import CircleReference, Scenario

log = logging.getLogger(__name__)

_RAD2DEG = 180.0 / math.pi

TICK_COLUMNS = (
    ["t", "ex", "ey", "ez", "eroll", "epitch", "eyaw"]
    + [f"q{i}" for i in range(1, 8)]
    + [f"qd{i}" for i in range(1, 8)]
    + [f"u{i}" for i in range(1, 7)]
    + ["qp_iters", "phase"]
    + [f"qtilde{i}" for i in range(1, 8)]
    + ["clamps"]
)
PHASE_COLUMNS = ["t", "phase", "attempt"]


class RunDiverged(SimulationDiverged):
    """The plant diverged during a scenario run.

    Attributes:
        tick: index of the control tick whose plant step failed.
        t: simulated time of the failure (s).
        out_dir: directory holding the partial logs, if any were written.
    """

    def __init__(self, message: str, tick: int, t: float | None, out_dir: Path | None = None):
        super().__init__(message, t)
        self.tick = tick
        self.out_dir = out_dir


@dataclass(frozen=True)
class RunMetrics:
    """Average/maximum errors after the transient, plus run diagnostics.

    ``rows`` is the per-tick log (one list per row, columns as in
    :data:`TICK_COLUMNS`) and ``out_dir`` the directory it was written to.
    """

    avg_position: float
    max_position: float
    avg_orientation_deg: float
    max_orientation_deg: float
    controller: str
    scenario: str
    geometry: str
    diagnostics: dict = field(default_factory=dict)
    out_dir: Path | None = None
    rows: list = field(default_factory=list, repr=False, compare=False)
    phase_log: list = field(default_factory=list, repr=False, compare=False)

    def summary(self) -> dict:
        d = asdict(self)
        for k in ("rows", "phase_log"):
            d.pop(k)
        d["out_dir"] = None if self.out_dir is None else str(self.out_dir)
        return d


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def metrics_from_rows(rows, transient: float):
    """``(avg_pos, max_pos, avg_ori_deg, max_ori_deg)`` over rows with ``t >= transient``."""
    arr = np.array([[r[0], r[1], r[2], r[3], r[4], r[5], r[6]] for r in rows], dtype=float)
    arr = arr[arr[:, 0] >= transient - 1e-9]
    if arr.size == 0:
        return 0.0, 0.0, 0.0, 0.0
    pos = np.linalg.norm(arr[:, 1:4], axis=1)
    ori = np.linalg.norm(arr[:, 4:7], axis=1)
    return float(pos.mean()), float(pos.max()), float(ori.mean()), float(ori.max())


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def initial_configuration(scn: Scenario) -> np.ndarray:
    """Joint angles that put the flange on the reference at ``t = 0``."""
    chain = scn.arm.chain
    base0 = sample(scn.profile, 0.0).pose
    if scn.mission is not None:
        return np.array(scn.mission.home_q, dtype=float)
    ref = scn.reference
    q = np.array(scn.initial_guess, dtype=float)
    if isinstance(ref, CircleReference):
        # settle on the circle centre first so every start angle gets the same branch
        q = solve_ik(chain, ref.start_pose(), q, base0, limits=scn.limits)
    return solve_ik(chain, ref.pose_at(0.0), q, base0, limits=scn.limits)


def slew(current: Pose, target: Pose, dt: float, max_speed: float, max_turn_rate: float) -> Pose:
    """Move ``current`` toward ``target`` by at most ``max_speed dt`` and ``max_turn_rate dt``."""
    d = target.p - current.p
    n = float(np.linalg.norm(d))
    step_p = max_speed * dt
    p = target.p if n <= step_p else current.p + d * (step_p / n)
    rv = orientation_error_vector(current, target)
    ang = float(np.linalg.norm(rv))
    step_a = max_turn_rate * dt
    if ang <= step_a:
        xi = target.xi
    else:
        xi = quat_mul(quat_from_axis_angle(rv / ang, step_a), current.xi)
    return Pose(p, xi)


class _MissionDriver:
    """UAV truth, camera fixes, the target filter and the landing state machine."""

    def __init__(self, scn: Scenario, rng: np.random.Generator):
        m = scn.mission
        self.spec = m
        self.dt = scn.dt
        self.rng = rng
        self.model = kalman.FilterModel.constant_velocity(scn.dt, m.sigma_s, m.sigma_m, m.gate)
        self.filter: kalman.TargetState | None = None
        self.state = MissionState()
        self.replay = None
        if m.measurements_file is not None:
            ts, xyz = kalman.read_measurements(m.measurements_file)
            self.replay = {int(round(t / scn.dt)): p for t, p in zip(ts, xyz)}
        self.err_t: list = []
        self.err_v: list = []
        self.unsafe_descents = 0
        self.rejected = 0
        self.phase_log: list = []
        self.reference: Pose | None = None

    def measurement(self, k: int, t: float):
        if self.replay is not None:
            return self.replay.get(k)
        return self.spec.uav.position(t) + self.rng.normal(0.0, self.spec.sigma_m, 3)

    def tick(self, k: int, t: float, ee: Pose) -> Pose:
        z = self.measurement(k, t)
        if self.filter is None:
            if z is not None:
                self.filter = kalman.TargetState.initial(z, self.spec.sigma_m, 1.0)
        else:
            self.filter = kalman.step(self.filter, z, self.model)
            self.rejected += int(self.filter.rejected)
        cfg = self.spec.config
        prev = self.state.label
        self.state, directive = mission_step(self.state, self.filter, ee, self.spec.events, t, cfg)
        if not self.phase_log or self.state.label != prev:
            self.phase_log.append([t, self.state.label, self.state.attempt])
        # independent check of the catch gate on a separately kept history
        if self.filter is not None:
            block = self.filter.position - np.array([0.0, 0.0, cfg.tether_length])
            self.err_t.append(t)
            self.err_v.append(float(np.hypot(*(ee.p[:2] - block[:2]))))
            del self.err_t[:-200], self.err_v[:-200]
        if directive.kind == "descend-to-catch" and not catch_condition(
                self.err_t, self.err_v, t, self.dt):
            self.unsafe_descents += 1
        goal = directive.target if directive.target is not None else cfg.home
        # directives jump (home <-> block); the arm gets a speed-limited version
        if self.reference is None:
            self.reference = goal
        else:
            self.reference = slew(self.reference, goal, self.dt, self.spec.max_speed,
                                  self.spec.max_turn_rate)
        return self.reference


def run_scenario(scn: Scenario, out_dir: Path | str | None = None,
                 controller: str | None = None) -> RunMetrics:
    """Run the closed loop for ``scn.duration`` seconds.

    Args:
        scn: scenario to run.
        out_dir: directory for ``ticks.csv``, ``summary.json`` and, for
            missions, ``phases.csv``. Nothing is written when ``None``.
        controller: override of the scenario's controller.

    Raises:
        RunDiverged: the plant left the plausible velocity range; partial
            logs are written first.
    """
    if controller is not None:
        scn = dataclasses.replace(scn, controller=controller)
    wall0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    chain, model, limits, gains = scn.arm.chain, scn.arm, scn.limits, scn.gains
    dt, cfg = scn.dt, scn.tracker
    ctrl = scn.controller
    rng = np.random.default_rng(scn.seed)
    mission = _MissionDriver(scn, rng) if scn.mission is not None else None
    tracker = MpcTracker(cfg, limits, QpSolver())
    H = scn.estimator
    est_state = est.EstimatorState.zeros(saturation=scn.estimator_saturation)

    def gravity_model(q):
        return gravity_torque(model, q)

    q0 = initial_configuration(scn)
    sim = SimState(q0, np.zeros(N_JOINTS))
    q_bar = q0.copy()
    qd_cmd = np.zeros(N_JOINTS)
    q_tilde = np.zeros(N_JOINTS)
    # joint state, base pose and the servo setpoint/rate in force at each tick boundary
    history = [(sim.q, sim.qd, sample(scn.profile, 0.0).pose, q_bar, qd_cmd)]
    rows: list = []
    max_bound = 0.0
    max_q_excess = 0.0
    max_qd_excess = 0.0
    qp_capped = 0
    scaled_ticks = 0
    joint_err: list = []

    def finish(diverged: RunDiverged | None = None) -> RunMetrics:
        avg_p, max_p, avg_o, max_o = metrics_from_rows(rows, scn.transient)
        diag = {
            "ticks": len(rows),
            "max_bound_violation": max_bound,
            "max_position_limit_excess_rad": max_q_excess,
            "max_velocity_limit_excess_rad_s": max_qd_excess,
            "qp_iteration_cap_ticks": qp_capped,
            "scaled_command_ticks": scaled_ticks,
            # |q - q_bar_d| over the last 80 % of the run
            "mean_joint_error_rad": float(np.mean(joint_err[len(joint_err) // 5:]))
            if joint_err else 0.0,
            "estimator_clamps": est_state.clamps,
            "latency_ticks": scn.latency_ticks,
            "wall_time_s": time.perf_counter() - wall0,
            "diverged": diverged is not None,
        }
        if diverged is not None:
            diag["diverged_tick"] = diverged.tick
            diag["diverged_t"] = diverged.t
        phases = []
        if mission is not None:
            phases = mission.phase_log
            diag.update({
                "final_phase": mission.state.phase.value,
                "attempts": mission.state.attempt,
                "failures": mission.state.failures,
                "restore_intervals": restore_intervals(phases),
                "unsafe_descents": mission.unsafe_descents,
                "rejected_measurements": mission.rejected,
                "done_t": next((r[0] for r in phases if r[1] == Phase.DONE.value), None),
            })
        metrics = RunMetrics(avg_p, max_p, avg_o, max_o, ctrl, scn.name, scn.geometry_key(),
                             diag, out, rows, phases)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            write_csv(out / "ticks.csv", TICK_COLUMNS, rows)
            if mission is not None:
                write_csv(out / "phases.csv", PHASE_COLUMNS, phases)
            summary = metrics.summary()
            summary["diagnostics"] = {k: v for k, v in diag.items() if k != "wall_time_s"}
            (out / "summary.json").write_text(json.dumps(summary, indent=2, default=str) + "\n")
        return metrics

    for k in range(scn.n_ticks):
        t = k * dt
        base_now = sample(scn.profile, t).pose
        true_pose = forward_kinematics(chain, sim.q, base_now)

        # the controller sees joint and base samples `latency_ticks` old
        q_m, qd_m, base_m, q_bar_m, qd_cmd_m = history[max(0, len(history) - 1 - scn.latency_ticks)]
        current = forward_kinematics(chain, q_m, base_m)
        J = geometric_jacobian(chain, q_m, base_m)

        if mission is not None:
            target = mission.tick(k, t, current)
            window = ReferenceWindow.constant(target, cfg.horizon)
            desired, xd_dot = target, np.zeros(6)
            label = mission.state.label
        else:
            desired = scn.reference.pose_at(t)
            xd_dot = scn.reference.twist_at(t)
            window = None
            label = "run"

        pe = desired.p - true_pose.p
        oe = orientation_error_vector(true_pose, desired) * _RAD2DEG

        # servo error against the setpoint of the same instant as the sample
        e = q_m - q_bar_m
        ed = qd_m - qd_cmd_m
        joint_err.append(float(np.linalg.norm(e)))
        if ctrl == "mpc+estimator":
            est_state = est.update(est_state, e, ed, H, dt)
            q_tilde = est.correction(est_state, e, ed, H)

        if ctrl == "traditional":
            cmd = traditional_step(current, desired, xd_dot, cfg.K, J, cfg.rho, q_m, dt,
                                   limits, q_ref=q_bar)
        else:
            if window is None:
                window = ReferenceWindow(tuple(scn.reference.pose_at(t + j * dt)
                                               for j in range(cfg.horizon + 1)))
            cmd = tracker.step(current, window, q_m, J, q_ref=q_bar)
            qp_capped += int(cmd.status is QpStatus.MAX_ITERATIONS)
            scaled_ticks += int(cmd.scaled)
        gl, gu = velocity_bounds(q_m, limits, dt)
        viol = float(np.max(np.maximum(cmd.qd_cmd - np.maximum(gu, 0.0),
                                       np.minimum(gl, 0.0) - cmd.qd_cmd)))
        max_bound = max(max_bound, viol, 0.0)

        rows.append([t, *pe.tolist(), *oe.tolist(), *sim.q.tolist(), *sim.qd.tolist(),
                     *cmd.u.as_array().tolist(), int(cmd.qp_iters), label,
                     *q_tilde.tolist(), int(est_state.clamps)])

        ramp_start, ramp_rate, offset = q_bar.copy(), cmd.qd_cmd.copy(), q_tilde.copy()
        q_bar, qd_cmd = cmd.q_bar_d, cmd.qd_cmd

        def servo(q, qd, ts, t0=t):
            q_des = ramp_start + ramp_rate * (ts - t0) + offset
            return pd_gravity_control(q, qd, q_des, ramp_rate, gains, gravity_model)

        try:
            sim = step(model, sim, servo, scn.profile, dt, limits)
        except SimulationDiverged as exc:
            err = RunDiverged(f"tick {k}: {exc}", k, exc.t, out)
            log.error("run %s diverged at tick %d (t=%.3f s)", scn.name, k, exc.t or t)
            finish(err)
            raise err from exc
        max_q_excess = max(max_q_excess, float(np.max(np.maximum(
            sim.q - limits.q_upper, limits.q_lower - sim.q))))
        max_qd_excess = max(max_qd_excess, float(np.max(np.maximum(
            sim.qd - limits.qd_upper, limits.qd_lower - sim.qd))))
        history.append((sim.q, sim.qd, sample(scn.profile, sim.t).pose, q_bar, qd_cmd))
        del history[:-(scn.latency_ticks + 2)]

    max_q_excess = max(max_q_excess, 0.0)
    max_qd_excess = max(max_qd_excess, 0.0)
    return finish()


# ---------------------------------------------------------------------------
# comparison


class GeometryMismatch(ValueError):
    """Runs to be compared were made on different scenario geometry."""


def load_summary(run_dir) -> dict:
    path = Path(run_dir) / "summary.json"
    if not path.exists():
        raise FileNotFoundError(f"{run_dir}: no summary.json (not a run directory?)")
    return json.loads(path.read_text())


def improvement(a: float, b: float) -> float | None:
    """Relative improvement ``(1 - a/b) * 100`` of ``a`` over ``b``; ``None`` when ``b == 0``."""
    if b == 0.0:
        return None
    return (1.0 - a / b) * 100.0


def compare(summaries, labels=None, check_geometry: bool = True):
    """Error table and pairwise improvements for two or more runs.

    Returns ``(table_rows, pair_rows)``: one dict per run with the four
    metrics, and one dict per ordered pair ``(a, b)`` with the position and
    orientation improvement of ``a`` over ``b``.

    Raises:
        GeometryMismatch: the runs do not share scenario geometry.
    """
    summaries = list(summaries)
    if len(summaries) < 2:
        raise ValueError("compare needs at least two runs")
    labels = labels or [s.get("controller", str(i)) for i, s in enumerate(summaries)]
    if check_geometry:
        keys = {s["geometry"] for s in summaries}
        if len(keys) > 1:
            raise GeometryMismatch("runs use different scenario geometry: "
                                   + ", ".join(f"{l}={s['geometry']}"
                                               for l, s in zip(labels, summaries)))
    table = [{"run": l, "avg_position_m": s["avg_position"], "max_position_m": s["max_position"],
              "avg_orientation_deg": s["avg_orientation_deg"],
              "max_orientation_deg": s["max_orientation_deg"]}
             for l, s in zip(labels, summaries)]
    pairs = []
    for i, (la, a) in enumerate(zip(labels, summaries)):
        for j, (lb, b) in enumerate(zip(labels, summaries)):
            if i == j:
                continue
            pairs.append({"a": la, "b": lb,
                          "position_pct": improvement(a["avg_position"], b["avg_position"]),
                          "orientation_pct": improvement(a["avg_orientation_deg"],
                                                         b["avg_orientation_deg"])})
    return table, pairs


def _pct(v) -> str:
    return "n/a" if v is None else f"{v:.1f}%"


def format_table(table, pairs) -> str:
    """Aligned plain-text rendering of :func:`compare` output."""
    head = ["run", "avg_pos[m]", "max_pos[m]", "avg_ori[deg]", "max_ori[deg]"]
    body = [[r["run"], f"{r['avg_position_m']:.5f}", f"{r['max_position_m']:.5f}",
             f"{r['avg_orientation_deg']:.4f}", f"{r['max_orientation_deg']:.4f}"] for r in table]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(x.ljust(w) for x, w in zip(row, widths)) for row in [head, *body]]
    lines.append("")
    lines.append("improvement of a over b, (1 - a/b) * 100:")
    for p in pairs:
        lines.append(f"  {p['a']} vs {p['b']}: position {_pct(p['position_pct'])}, "
                     f"orientation {_pct(p['orientation_pct'])}")
    return "\n".join(lines)


def comparison_csv(table, pairs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "avg_position_m", "max_position_m", "avg_orientation_deg",
                "max_orientation_deg"])
    for r in table:
        w.writerow([r["run"], repr(r["avg_position_m"]), repr(r["max_position_m"]),
                    repr(r["avg_orientation_deg"]), repr(r["max_orientation_deg"])])
    w.writerow([])
    w.writerow(["a", "b", "position_pct", "orientation_pct"])
    for p in pairs:
        w.writerow([p["a"], p["b"], "n/a" if p["position_pct"] is None else repr(p["position_pct"]),
                    "n/a" if p["orientation_pct"] is None else repr(p["orientation_pct"])])
    return buf.getvalue()
