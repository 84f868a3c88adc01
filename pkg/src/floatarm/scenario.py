"""Scenario files: TOML with the unit spelled out in every key name.

A scenario fixes the arm, the base motion, the reference the end-effector
must follow, the controller and the run length. Keys are strict: an
unknown key (typically a unit typo such as ``period_ms``) is an error.

Example::

    name = "circle"
    duration_s = 60.0
    dt_s = 0.01
    seed = 1

    [controller]
    name = "mpc+estimator"

    [base]
    roll = { amplitude_deg = 6.0, period_s = 1.67 }
    pitch = { amplitude_deg = 3.0, period_s = 2.1 }

    [reference]
    kind = "circle"
    center_m = [0.65, 0.0, 0.45]
    radius_m = 0.35
    angular_rate_rad_per_s = 0.10471975511965977
    rpy_deg = [0.0, 60.0, 0.0]
"""
from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .base_motion import MotionProfile
from .dynamics import DEFAULT_ARMATURE, DEFAULT_LINK_MASSES, ArmModel, PdGains, default_arm
from .estimator import EstimatorGains
from .kalman import GATE_99_9
from .kinematics import (N_JOINTS, JointLimits, KinematicChain, Pose, default_chain,
                         forward_kinematics, rpy_to_matrix)
from .mission import MissionConfig, ScriptedEvent, ScriptedEvents, TrackingSpace
from .mpc import TrackerConfig

CONTROLLERS = ("traditional", "mpc", "mpc+estimator")
_ALIASES = {"trad": "traditional", "est": "mpc+estimator", "estimator": "mpc+estimator"}
_DEG = np.pi / 180.0


class ScenarioError(ValueError):
    """The scenario file is malformed or inconsistent."""


def controller_name(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in CONTROLLERS:
        raise ScenarioError(f"unknown controller {name!r}; expected one of {CONTROLLERS}")
    return name


# ---------------------------------------------------------------------------
# references


def _plane_axes(normal_hint_u, normal_hint_v):
    u = np.asarray(normal_hint_u, dtype=float)
    v = np.asarray(normal_hint_v, dtype=float)
    u = u / np.linalg.norm(u)
    v = v - (v @ u) * u
    n = np.linalg.norm(v)
    if n < 1e-9:
        raise ScenarioError("plane axes must not be parallel")
    return u, v / n


@dataclass(frozen=True)
class HoldReference:
    """Fixed world-frame pose."""

    pose: Pose

    def pose_at(self, t: float) -> Pose:
        return self.pose

    def twist_at(self, t: float) -> np.ndarray:
        return np.zeros(6)

    def start_pose(self) -> Pose:
        return self.pose


@dataclass(frozen=True)
class CircleReference:
    """Constant-orientation circle ``c + r (cos a u + sin a v)`` with ``a = a0 + w t``.

    ``span`` limits the swept angle: the point stops at ``a0 + span`` and
    holds there (an arc). ``span=None`` sweeps forever.
    """

    center: np.ndarray
    radius: float
    rate: float
    rotation: np.ndarray
    u: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    v: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    start_angle: float = 0.0
    span: float | None = None

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ScenarioError("radius must be positive")
        if self.span is not None and self.span <= 0.0:
            raise ScenarioError("arc span must be positive")

    def _angle(self, t: float):
        swept = self.rate * t
        if self.span is not None and abs(swept) >= self.span:
            return self.start_angle + np.sign(self.rate) * self.span, 0.0
        return self.start_angle + swept, self.rate

    def pose_at(self, t: float) -> Pose:
        a, _ = self._angle(t)
        p = self.center + self.radius * (np.cos(a) * self.u + np.sin(a) * self.v)
        return Pose.from_rotation(self.rotation, p)

    def twist_at(self, t: float) -> np.ndarray:
        a, w = self._angle(t)
        v = self.radius * w * (-np.sin(a) * self.u + np.cos(a) * self.v)
        return np.concatenate((v, np.zeros(3)))

    def start_pose(self) -> Pose:
        return Pose.from_rotation(self.rotation, self.center)


# ---------------------------------------------------------------------------
# mission


@dataclass(frozen=True)
class UavPath:
    """Piecewise-linear keyframes plus a sinusoidal hover wobble."""

    times: np.ndarray
    positions: np.ndarray
    wobble_amplitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    wobble_period: np.ndarray = field(default_factory=lambda: np.ones(3))

    def position(self, t: float) -> np.ndarray:
        base = np.array([np.interp(t, self.times, self.positions[:, i]) for i in range(3)])
        return base + self.wobble_amplitude * np.sin(2.0 * np.pi * t / self.wobble_period)


@dataclass(frozen=True)
class MissionSpec:
    config: MissionConfig
    events: ScriptedEvents
    uav: UavPath
    home_q: np.ndarray
    sigma_m: float = 0.02
    sigma_s: float = 1.0
    gate: float = GATE_99_9
    measurements_file: Path | None = None
    max_speed: float = 0.25
    max_turn_rate: float = 0.5


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class Scenario:
    """Everything one closed-loop run needs.

    ``latency_ticks`` is the age of the joint and base measurements the
    task controller sees (1 means the previous tick's sample).
    """

    name: str
    duration: float
    dt: float
    seed: int
    controller: str
    reference: object
    profile: MotionProfile
    arm: ArmModel
    gains: PdGains
    limits: JointLimits
    tracker: TrackerConfig
    estimator: EstimatorGains
    estimator_saturation: float = 50.0
    latency_ticks: int = 1
    transient: float = 1.0
    initial_guess: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.6, 0.0, 1.6, 0.0, -1.1, 0.0]))
    mission: MissionSpec | None = None
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.duration > 0.0:
            raise ScenarioError("duration must be positive")
        if not self.dt > 0.0:
            raise ScenarioError("dt must be positive")
        if self.latency_ticks < 0:
            raise ScenarioError("latency must be non-negative")
        object.__setattr__(self, "controller", controller_name(self.controller))
        if (self.reference is None) == (self.mission is None):
            raise ScenarioError("give exactly one of a reference trajectory or a mission")

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.dt))

    def geometry_key(self) -> str:
        """Digest of the parts that must agree for two runs to be comparable."""
        keep = {k: self.raw.get(k) for k in ("duration_s", "dt_s", "base", "reference",
                                             "mission", "arm", "transient_s")}
        blob = json.dumps(keep, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class _Table:
    """Strict view of one TOML table: every key must be consumed."""

    def __init__(self, data: dict, where: str):
        if not isinstance(data, dict):
            raise ScenarioError(f"[{where}] must be a table")
        self.data = data
        self.where = where
        self.used = set()

    def get(self, key, default=None, kind=None):
        self.used.add(key)
        if key not in self.data:
            return default
        val = self.data[key]
        try:
            return kind(val) if kind is not None else val
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"[{self.where}] {key}: {exc}") from None

    def need(self, key, kind=None):
        if key not in self.data:
            raise ScenarioError(f"[{self.where}] missing required key {key!r}")
        return self.get(key, kind=kind)

    def sub(self, key) -> "_Table":
        self.used.add(key)
        return _Table(self.data.get(key, {}), f"{self.where}.{key}" if self.where else key)

    def finish(self):
        extra = set(self.data) - self.used
        if extra:
            raise ScenarioError(f"[{self.where or 'top level'}] unknown keys: {sorted(extra)}")


def _vec(n):
    def conv(v):
        a = np.asarray(v, dtype=float)
        if a.shape != (n,):
            raise ValueError(f"expected {n} numbers, got shape {a.shape}")
        return a
    return conv


def _mat(rows, cols):
    def conv(v):
        a = np.asarray(v, dtype=float)
        if a.shape != (rows, cols):
            raise ValueError(f"expected a {rows}x{cols} array, got shape {a.shape}")
        return a
    return conv


def _rotation(rpy_deg) -> np.ndarray:
    return rpy_to_matrix(*(np.asarray(rpy_deg, dtype=float) * _DEG))


def _profile(t: _Table, root: Path) -> MotionProfile:
    lever = t.get("lever_arm_m", 0.5, float)
    trace = t.get("trace_file")
    if trace is not None:
        path = (root / trace).resolve()
        if not path.exists():
            raise ScenarioError(f"base trace {path} does not exist")
        for k in ("roll", "pitch", "yaw", "heave"):
            t.used.add(k)
        t.finish()
        return MotionProfile.from_trace_csv(path, lever_arm=lever)
    amp, per, ph = np.zeros(3), np.ones(3), np.zeros(3)
    for i, axis in enumerate(("roll", "pitch", "yaw")):
        a = t.sub(axis)
        amp[i] = a.get("amplitude_deg", 0.0, float) * _DEG
        per[i] = a.get("period_s", 1.0, float)
        ph[i] = a.get("phase_deg", 0.0, float) * _DEG
        a.finish()
    h = t.sub("heave")
    heave_a = h.get("amplitude_m", 0.0, float)
    heave_p = h.get("period_s", 1.0, float)
    h.finish()
    t.finish()
    try:
        return MotionProfile(amp, per, ph, heave_a, heave_p, lever)
    except ValueError as exc:
        raise ScenarioError(f"[base] {exc}") from None


def _arm(t: _Table):
    chain = default_chain()
    offsets = t.get("joint_offsets_m", None, _mat(N_JOINTS, 3))
    axes = t.get("joint_axes", None, _mat(N_JOINTS, 3))
    flange = t.get("flange_offset_m", None, _vec(3))
    if offsets is not None or axes is not None or flange is not None:
        chain = KinematicChain.from_offsets(
            offsets if offsets is not None else chain.origins[:, :3, 3],
            axes if axes is not None else chain.axes,
            flange if flange is not None else chain.ee[:3, 3])
    masses = t.get("link_masses_kg", DEFAULT_LINK_MASSES, _vec(N_JOINTS))
    armature = t.get("armature_kg_m2", DEFAULT_ARMATURE, _vec(N_JOINTS))
    model = default_arm(chain, masses, armature)
    d = PdGains.defaults()
    gains = PdGains(t.get("kp_nm_per_rad", d.kp, _vec(N_JOINTS)),
                    t.get("kd_nm_s_per_rad", d.kd, _vec(N_JOINTS)))
    guess = t.get("initial_guess_rad", None, _vec(N_JOINTS))
    t.finish()
    return model, gains, guess


def _reference(t: _Table):
    kind = t.need("kind", str)
    rot = _rotation(t.get("rpy_deg", [0.0, 0.0, 0.0], _vec(3)))
    if kind == "hold":
        ref = HoldReference(Pose.from_rotation(rot, t.need("position_m", _vec(3))))
    elif kind in ("circle", "arc"):
        u, v = _plane_axes(t.get("plane_u", [0.0, 1.0, 0.0], _vec(3)),
                           t.get("plane_v", [0.0, 0.0, 1.0], _vec(3)))
        span = t.need("span_deg", float) * _DEG if kind == "arc" else None
        ref = CircleReference(t.need("center_m", _vec(3)), t.need("radius_m", float),
                              t.need("angular_rate_rad_per_s", float), rot, u, v,
                              t.get("start_deg", 0.0, float) * _DEG, span)
    else:
        raise ScenarioError(f"[reference] unknown kind {kind!r} (hold, circle, arc)")
    t.finish()
    return ref


def _timed_poses(entries, rot, where):
    out = []
    for i, e in enumerate(entries):
        w = _Table(e, f"{where}[{i}]")
        r = _rotation(w.get("rpy_deg")) if "rpy_deg" in e else rot
        out.append((w.need("duration_s", float), Pose.from_rotation(r, w.need("position_m", _vec(3)))))
        w.finish()
    return tuple(out)


def _mission(t: _Table, chain: KinematicChain, dt: float, seed: int, root: Path) -> MissionSpec:
    home_q = t.need("home_q_rad", _vec(N_JOINTS))
    home = forward_kinematics(chain, home_q)
    rot = home.rotation
    sp = t.sub("space")
    space = TrackingSpace.flat(sp.get("range_m", 0.70, float), sp.get("z_lower_m", 0.2, float),
                               sp.get("z_upper_m", 1.6, float))
    sp.finish()
    restore = t.get("restore_s")
    if restore is None:
        # one duration per possible failure, drawn from [4, 6] s on the tick grid
        rng = np.random.default_rng([seed, 4])
        restore = tuple(float(np.floor(x / dt) * dt) for x in rng.uniform(4.0, 6.0, size=8))
    else:
        restore = tuple(float(x) for x in np.atleast_1d(restore))
    events = []
    for i, e in enumerate(t.get("events", [])):
        w = _Table(e, f"mission.events[{i}]")
        try:
            events.append(ScriptedEvent(w.need("event", str), t=w.get("t_s", None, float),
                                        attempt=w.get("attempt", None, int),
                                        after=w.get("after_s", None, float)))
        except ValueError as exc:
            raise ScenarioError(f"[mission.events[{i}]] {exc}") from None
        w.finish()
    try:
        cfg = MissionConfig(space=space, tether_length=t.get("tether_length_m", 0.6, float),
                            track_height=t.get("track_height_m", 0.75, float),
                            catch_duration=t.get("catch_duration_s", 1.0, float),
                            restore_durations=restore, home=home, tool_rotation=rot,
                            waypoints=_timed_poses(t.get("calibrate", []), rot, "mission.calibrate"),
                            place_path=_timed_poses(t.get("place", []), rot, "mission.place"),
                            proximity=t.get("proximity_catch", False, bool), dt=dt)
        evs = ScriptedEvents(tuple(events))
    except ValueError as exc:
        raise ScenarioError(f"[mission] {exc}") from None
    u = t.sub("uav")
    keys = u.need("keyframes")
    times = np.array([float(k["t_s"]) for k in keys])
    pos = np.array([_vec(3)(k["position_m"]) for k in keys])
    if np.any(np.diff(times) <= 0.0):
        raise ScenarioError("[mission.uav] keyframe times must increase")
    path = UavPath(times, pos, u.get("wobble_amplitude_m", np.zeros(3), _vec(3)),
                   u.get("wobble_period_s", np.ones(3), _vec(3)))
    u.finish()
    mfile = t.get("measurements_file")
    if mfile is not None:
        mfile = (root / mfile).resolve()
        if not mfile.exists():
            raise ScenarioError(f"measurement file {mfile} does not exist")
    spec = MissionSpec(cfg, evs, path, home_q, t.get("sigma_m", 0.02, float),
                       t.get("process_sigma", 1.0, float),
                       t.get("gate_chi2", GATE_99_9, float), mfile,
                       t.get("max_speed_m_per_s", 0.25, float),
                       t.get("max_turn_rate_rad_per_s", 0.5, float))
    if spec.max_speed <= 0.0 or spec.max_turn_rate <= 0.0:
        raise ScenarioError("[mission] slew limits must be positive")
    t.finish()
    return spec


def _set_dotted(data: dict, key: str, value):
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ScenarioError(f"{key}: {p} is not a table")
    node[parts[-1]] = value


def parse_value(text: str):
    """Parse a command-line value as a TOML literal, falling back to a plain string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def scenario_from_dict(data: dict, root: Path | str = ".", overrides: dict | None = None) -> Scenario:
    """Build a :class:`Scenario` from parsed TOML (``root`` resolves relative paths)."""
    data = copy.deepcopy(data)
    for k, v in (overrides or {}).items():
        _set_dotted(data, k, v)
    root = Path(root)
    top = _Table(data, "")
    name = top.get("name", "scenario", str)
    duration = top.need("duration_s", float)
    dt = top.get("dt_s", 0.01, float)
    seed = top.get("seed", 0, int)
    transient = top.get("transient_s", 1.0, float)

    c = top.sub("controller")
    ctrl = c.get("name", "mpc+estimator", str)
    latency = c.get("latency_ticks", 1, int)
    d = TrackerConfig()
    tracker = TrackerConfig(
        Q=c.get("q_weight", 100.0, float) * np.eye(6),
        R=c.get("r_weight", 0.1, float) * np.eye(6),
        horizon=c.get("horizon_steps", d.horizon, int), dt=dt,
        rho=c.get("damping", d.rho, float),
        K=np.diag(c.get("gain_per_s", np.diag(d.K), _vec(6))))
    est = EstimatorGains(c.get("estimator_h", EstimatorGains().h, _vec(3)))
    sat = c.get("estimator_saturation", 50.0, float)
    c.finish()

    profile = _profile(top.sub("base"), root)
    model, gains, guess = _arm(top.sub("arm"))
    ref = _reference(top.sub("reference")) if "reference" in data else None
    top.used.add("reference")
    mission = (_mission(top.sub("mission"), model.chain, dt, seed, root)
               if "mission" in data else None)
    top.used.add("mission")
    top.finish()
    kw = {} if guess is None else {"initial_guess": guess}
    return Scenario(name, duration, dt, seed, ctrl, ref, profile, model, gains,
                    JointLimits.defaults(), tracker, est, sat, latency, transient,
                    mission=mission, raw=data, **kw)


def load_scenario(path, overrides: dict | None = None) -> Scenario:
    """Read a scenario file; ``overrides`` maps dotted keys to replacement values."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file {path} does not exist")
    with path.open("rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from None
    return scenario_from_dict(data, path.parent, overrides)
