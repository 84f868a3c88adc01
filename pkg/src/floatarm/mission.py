"""Landing-assistance state machine: track and catch, tethered landing, calibrate and place.

Contact and docking are not sensed in simulation. Catch outcomes come
from a script (or a proximity rule), and docking/platform events arrive at
scripted times. The machine emits exactly one :class:`Directive` per tick
for the task-space controller.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .kalman import TargetState
from .kinematics import Pose

CATCH_ERROR_M = 0.15
CATCH_WINDOW_S = 1.0
LOCK_DURATION_S = 0.8
ATTRACT_RADIUS_M = 0.03


class MissionProtocolError(RuntimeError):
    """A scripted event arrived in a phase that cannot accept it."""


class Phase(str, enum.Enum):
    TRACK_CATCH = "TrackCatch"
    TETHER = "Tether"
    CALIBRATE = "Calibrate"
    PLACE = "Place"
    DONE = "Done"


_ORDER = {p: i for i, p in enumerate(Phase)}


class SubState(str, enum.Enum):
    TRACKING = "tracking"
    CATCHING = "catching"
    RESTORING = "restoring"


class Event(str, enum.Enum):
    CATCH_FAIL = "catch-fail"
    CATCH_SUCCESS = "catch-success"
    BLOCK_LOCKED = "block-locked"
    DOCKING_SUCCESS = "docking-success"
    PLATFORM_LOCKED = "platform-locked"


# ---------------------------------------------------------------------------
# geometry helpers


@dataclass(frozen=True)
class TrackingSpace:
    """Cylinder-like region ``|[x, y]| <= r, S_L(x, y) <= z <= S_U(x, y)``."""

    r: float = 0.70
    lower: Callable[[float, float], float] = lambda x, y: 0.2
    upper: Callable[[float, float], float] = lambda x, y: 1.6

    def __post_init__(self):
        if self.r <= 0.0:
            raise ValueError("catching range must be positive")
        for x, y in ((0.0, 0.0), (self.r, 0.0), (0.0, self.r), (-self.r, 0.0), (0.0, -self.r)):
            if not self.lower(x, y) < self.upper(x, y):
                raise ValueError("lower boundary must lie below the upper boundary")

    @classmethod
    def flat(cls, r: float, z_lower: float, z_upper: float) -> "TrackingSpace":
        return cls(r, lambda x, y: z_lower, lambda x, y: z_upper)


def in_tracking_space(p, space: TrackingSpace) -> bool:
    x, y, z = (float(v) for v in p)
    if np.hypot(x, y) > space.r:
        return False
    return space.lower(x, y) <= z <= space.upper(x, y)


def catch_condition(times, errors, now: float, dt: float = 0.01,
                    window: float = CATCH_WINDOW_S, threshold: float = CATCH_ERROR_M) -> bool:
    """True iff every control tick in ``[now - window, now]`` has a sample below ``threshold``.

    ``times``/``errors`` are the planar tracking-error samples so far; a
    missing tick anywhere in the window makes the condition false.
    """
    t = np.asarray(times, dtype=float)
    err = np.asarray(errors, dtype=float)
    n = int(round(window / dt))
    if t.size < n + 1:
        return False
    t = t[-(n + 1):]
    err = err[-(n + 1):]
    expected = now - dt * np.arange(n, -1, -1)
    if np.any(np.abs(t - expected) > 0.25 * dt):
        return False
    return bool(np.all(err < threshold))


def block_position(uav_position, tether_length: float) -> np.ndarray:
    """Block hanging straight below the UAV on a taut tether."""
    if tether_length < 0.0:
        raise ValueError("tether length must be non-negative")
    return np.asarray(uav_position, dtype=float) - np.array([0.0, 0.0, tether_length])


# ---------------------------------------------------------------------------
# script


_ACCEPTING = {
    Event.DOCKING_SUCCESS: Phase.TETHER,
    Event.PLATFORM_LOCKED: Phase.PLACE,
}


@dataclass(frozen=True)
class ScriptedEvent:
    """One scripted contact or docking outcome.

    Exactly one key is set: ``t`` fires the event at an absolute time,
    ``attempt`` decides the outcome of that catch attempt, and ``after``
    fires a docking/platform event once the phase that accepts it has been
    active for ``after`` seconds.
    """

    event: Event
    t: float | None = None
    attempt: int | None = None
    after: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "event", Event(self.event))
        if sum(k is not None for k in (self.t, self.attempt, self.after)) != 1:
            raise ValueError("a scripted event needs exactly one of t, attempt or after")
        if self.attempt is not None:
            if self.event not in (Event.CATCH_FAIL, Event.CATCH_SUCCESS):
                raise ValueError("only catch outcomes can be keyed by attempt")
            if self.attempt < 1:
                raise ValueError("attempts are numbered from 1")
        if self.after is not None:
            if self.event not in _ACCEPTING:
                raise ValueError("only docking-success and platform-locked can be phase-relative")
            if self.after < 0.0:
                raise ValueError("phase-relative delay must be non-negative")


@dataclass(frozen=True)
class ScriptedEvents:
    events: tuple = ()

    def __post_init__(self):
        evs = tuple(self.events)
        times = [e.t for e in evs if e.t is not None]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("scripted event times must be non-decreasing")
        object.__setattr__(self, "events", evs)

    def outcome(self, attempt: int) -> Event | None:
        for e in self.events:
            if e.attempt == attempt:
                return e.event
        return None

    def due(self, t_prev: float, t: float) -> list[Event]:
        """Time-keyed events in ``(t_prev, t]``."""
        return [e.event for e in self.events if e.t is not None and t_prev < e.t <= t + 1e-12]

    def due_in_phase(self, phase: "Phase", elapsed: float) -> list[Event]:
        """Phase-relative events whose delay has run out after ``elapsed`` s in ``phase``."""
        return [e.event for e in self.events
                if e.after is not None and _ACCEPTING[e.event] is phase
                and elapsed >= e.after - 1e-9]


# ---------------------------------------------------------------------------
# directives


@dataclass(frozen=True)
class Directive:
    """What the task controller should do this tick.

    ``kind`` is one of ``hold``, ``track-xy``, ``descend-to-catch``,
    ``restore``, ``stabilize``, ``follow``. ``target`` is the desired
    world-frame pose (``None`` for a plain hold of the current command).
    """

    kind: str
    target: Pose | None = None


@dataclass(frozen=True)
class MissionConfig:
    """Static parameters of the landing sequence.

    Attributes:
        space: tracking space of the catcher.
        tether_length: released string length (m).
        track_height: catcher height while tracking (m).
        catch_duration: time a catch attempt takes before its outcome is known (s).
        restore_durations: per failed attempt, the restoration time; cycled
            when there are more failures than entries. Each must be in [4, 6] s.
        home: catcher pose the arm restores to and holds when idle.
        tool_rotation: catcher orientation while tracking/catching.
        waypoints: ``(duration_s, Pose)`` list for the calibrate phase.
        place_path: ``(duration_s, Pose)`` list for the place phase.
        proximity: decide catch outcomes by ``|ee - block| < 0.03 m`` instead of the script.
    """

    space: TrackingSpace = field(default_factory=TrackingSpace)
    tether_length: float = 0.6
    track_height: float = 0.75
    catch_duration: float = 1.0
    restore_durations: tuple = (5.0,)
    home: Pose = field(default_factory=Pose.identity)
    tool_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    waypoints: tuple = ()
    place_path: tuple = ()
    proximity: bool = False
    dt: float = 0.01

    def __post_init__(self):
        if not self.restore_durations:
            raise ValueError("need at least one restoration duration")
        for d in self.restore_durations:
            if not 4.0 <= d <= 6.0:
                raise ValueError("restoration durations must lie in [4, 6] s")


@dataclass(frozen=True)
class MissionState:
    """Phase, sub-state, timers and counters of the landing sequence."""

    phase: Phase = Phase.TRACK_CATCH
    sub: SubState = SubState.TRACKING
    phase_start: float = 0.0
    sub_start: float = 0.0
    attempt: int = 0
    failures: int = 0
    block_attracted: bool = False
    block_locked: bool = False
    docking_success: bool = False
    platform_locked: bool = False
    attracted_at: float | None = None
    last_t: float = -np.inf
    err_t: tuple = ()
    err_v: tuple = ()
    anchor: Pose | None = None

    @property
    def hold_timer(self) -> float:
        return max(0.0, self.last_t - self.sub_start) if np.isfinite(self.last_t) else 0.0

    @property
    def label(self) -> str:
        if self.phase is Phase.TRACK_CATCH:
            return f"{self.phase.value}:{self.sub.value}"
        return self.phase.value


def _push_error(state: MissionState, t: float, err: float, keep: int):
    ts = (state.err_t + (t,))[-keep:]
    vs = (state.err_v + (err,))[-keep:]
    return ts, vs


def _timed_pose(path, t_rel: float) -> Pose:
    """Pose of the waypoint active at ``t_rel`` in a ``(duration, pose)`` list."""
    acc = 0.0
    for dur, pose in path:
        acc += dur
        if t_rel < acc:
            return pose
    return path[-1][1]


def _path_duration(path) -> float:
    return float(sum(d for d, _ in path))


def mission_step(state: MissionState, uav_estimate: TargetState | None, ee_pose: Pose,
                 events: ScriptedEvents, t: float,
                 cfg: MissionConfig) -> tuple[MissionState, Directive]:
    """Advance the landing sequence by one control tick.

    Raises:
        MissionProtocolError: a scripted event is incompatible with the phase.
    """
    if t < state.last_t:
        raise ValueError("mission time must not run backwards")
    s = state
    for ev in events.due(s.last_t, t):
        s = _apply_event(s, ev, t)
    # the lock closes a fixed time after attraction
    if s.block_attracted and not s.block_locked and t >= s.attracted_at + LOCK_DURATION_S - 1e-9:
        s = _apply_event(s, Event.BLOCK_LOCKED, t)
    for ev in events.due_in_phase(s.phase, t - s.phase_start):
        if s.phase is _ACCEPTING[ev]:
            s = _apply_event(s, ev, t)
    s = replace(s, last_t=t)

    if s.phase is Phase.TRACK_CATCH:
        return _track_catch(s, uav_estimate, ee_pose, events, t, cfg)
    if s.phase is Phase.TETHER:
        anchor = s.anchor if s.anchor is not None else ee_pose
        return replace(s, anchor=anchor), Directive("stabilize", anchor)
    if s.phase is Phase.CALIBRATE:
        rel = t - s.phase_start
        if cfg.waypoints and rel < _path_duration(cfg.waypoints):
            return s, Directive("follow", _timed_pose(cfg.waypoints, rel))
        s = replace(s, phase=Phase.PLACE, phase_start=t, sub_start=t)
    if s.phase is Phase.PLACE:
        rel = t - s.phase_start
        target = _timed_pose(cfg.place_path, rel) if cfg.place_path else s.anchor
        return s, Directive("follow", target)
    return s, Directive("hold", cfg.home)


def _apply_event(s: MissionState, ev: Event, t: float) -> MissionState:
    if ev is Event.BLOCK_LOCKED:
        if s.phase is not Phase.TRACK_CATCH or not s.block_attracted:
            raise MissionProtocolError(f"block-locked at t={t:.2f} s in phase {s.label}")
        return replace(s, block_locked=True, phase=Phase.TETHER, phase_start=t, sub_start=t,
                       anchor=None)
    if ev is Event.DOCKING_SUCCESS:
        if s.phase is not Phase.TETHER:
            raise MissionProtocolError(f"docking-success at t={t:.2f} s in phase {s.label}")
        return replace(s, docking_success=True, phase=Phase.CALIBRATE, phase_start=t, sub_start=t)
    if ev is Event.PLATFORM_LOCKED:
        if s.phase is not Phase.PLACE:
            raise MissionProtocolError(f"platform-locked at t={t:.2f} s in phase {s.label}")
        return replace(s, platform_locked=True, phase=Phase.DONE, phase_start=t, sub_start=t)
    raise MissionProtocolError(f"{ev.value} cannot be scheduled by time (t={t:.2f} s)")


def _tool_pose(cfg: MissionConfig, p) -> Pose:
    return Pose.from_rotation(cfg.tool_rotation, p)


def _track_catch(s: MissionState, uav: TargetState | None, ee: Pose, events: ScriptedEvents,
                 t: float, cfg: MissionConfig):
    keep = int(round(CATCH_WINDOW_S / cfg.dt)) + 1
    if s.block_attracted:
        # waiting for the lock: keep the catcher where it is
        return s, Directive("stabilize", s.anchor or ee)

    if s.sub is SubState.RESTORING:
        dur = cfg.restore_durations[(s.failures - 1) % len(cfg.restore_durations)]
        if t - s.sub_start < dur - 1e-9:
            return s, Directive("restore", cfg.home)
        s = replace(s, sub=SubState.TRACKING, sub_start=t, err_t=(), err_v=())

    block = None if uav is None else block_position(uav.position, cfg.tether_length)
    if block is None or not in_tracking_space(block, cfg.space):
        # target lost: drop the error history so the catch window restarts
        s = replace(s, sub=SubState.TRACKING, err_t=(), err_v=(),
                    sub_start=t if s.sub is not SubState.TRACKING else s.sub_start)
        return s, Directive("hold", cfg.home)

    err = float(np.hypot(*(ee.p[:2] - block[:2])))
    ts, vs = _push_error(s, t, err, keep)
    s = replace(s, err_t=ts, err_v=vs)
    ok = catch_condition(ts, vs, t, cfg.dt)

    if s.sub is SubState.CATCHING:
        if not ok:
            # the catch window broke mid-attempt: count it as a miss
            return _fail(s, t, cfg)
        if cfg.proximity and np.linalg.norm(ee.p - block) < ATTRACT_RADIUS_M:
            return _attract(s, t, ee)
        if t - s.sub_start >= cfg.catch_duration - 1e-9:
            outcome = Event.CATCH_FAIL if cfg.proximity else events.outcome(s.attempt)
            if outcome is Event.CATCH_SUCCESS:
                return _attract(s, t, ee)
            return _fail(s, t, cfg)
        return s, Directive("descend-to-catch", _tool_pose(cfg, block))

    if ok:
        s = replace(s, sub=SubState.CATCHING, sub_start=t, attempt=s.attempt + 1)
        return s, Directive("descend-to-catch", _tool_pose(cfg, block))
    target = np.array([block[0], block[1], cfg.track_height])
    return s, Directive("track-xy", _tool_pose(cfg, target))


def _fail(s: MissionState, t: float, cfg: MissionConfig):
    s = replace(s, sub=SubState.RESTORING, sub_start=t, failures=s.failures + 1,
                err_t=(), err_v=())
    return s, Directive("restore", cfg.home)


def _attract(s: MissionState, t: float, ee: Pose):
    s = replace(s, block_attracted=True, attracted_at=t, anchor=ee)
    return s, Directive("stabilize", ee)


def phase_rank(phase: Phase) -> int:
    return _ORDER[Phase(phase)]


def restore_intervals(log: Sequence[tuple]) -> list[tuple[float, float]]:
    """``(start, end)`` of every restoring interval in a ``(t, label, attempt)`` log."""
    out = []
    start = None
    for t, label, _ in log:
        if label.endswith(SubState.RESTORING.value):
            if start is None:
                start = t
        elif start is not None:
            out.append((start, t))
            start = None
    return out
