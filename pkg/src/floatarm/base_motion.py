"""Wave-induced motion of the arm's mounting base.

The base attitude is a ZYX roll/pitch/yaw trajectory about a rotation centre
that sits ``lever_arm`` metres below the arm base, so attitude motion also
moves (and accelerates) the base origin. The world frame is the base frame
at zero attitude.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .kinematics import Pose, rpy_to_matrix

_Z = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class BaseState:
    """Base attitude and its derivatives at time ``t``.

    ``rpy``, ``rpy_rate`` and ``rpy_acc`` are the Euler angles and their time
    derivatives. ``omega``/``alpha`` are the angular velocity and acceleration
    vectors and ``position``/``velocity``/``linear_acc`` describe the base
    origin, all in the world frame.
    """

    t: float
    rpy: np.ndarray
    rpy_rate: np.ndarray
    rpy_acc: np.ndarray
    omega: np.ndarray
    alpha: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    linear_acc: np.ndarray

    @classmethod
    def stationary(cls, t: float = 0.0) -> "BaseState":
        z = np.zeros(3)
        return cls(t, z, z, z, z, z, z, z, z)

    @property
    def rotation(self) -> np.ndarray:
        return rpy_to_matrix(*self.rpy)

    @property
    def pose(self) -> Pose:
        return Pose.from_rotation(self.rotation, self.position)


@dataclass(frozen=True)
class MotionProfile:
    """Analytic sinusoidal attitude profile or a recorded attitude trace.

    Analytic mode: angle ``A sin(2 pi t / T + phi)`` per roll/pitch/yaw axis,
    plus an optional sinusoidal heave of the rotation centre. Trace mode:
    ``trace`` is an ``(N, 3)`` array of roll/pitch/yaw samples spaced
    ``sample_period`` seconds apart, starting at ``t = 0``.
    """

    amplitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    period: np.ndarray = field(default_factory=lambda: np.ones(3))
    phase: np.ndarray = field(default_factory=lambda: np.zeros(3))
    heave_amplitude: float = 0.0
    heave_period: float = 1.0
    lever_arm: float = 0.5
    trace: np.ndarray | None = None
    sample_period: float | None = None

    def __post_init__(self):
        for name in ("amplitude", "period", "phase"):
            a = np.array(getattr(self, name), dtype=float).reshape(3)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(self.period <= 0.0) or self.heave_period <= 0.0:
            raise ValueError("periods must be positive")
        if self.trace is not None:
            tr = np.array(self.trace, dtype=float)
            if tr.ndim != 2 or tr.shape[1] != 3 or tr.shape[0] < 2:
                raise ValueError("trace must be an (N >= 2, 3) array of roll/pitch/yaw")
            if self.sample_period is None or self.sample_period <= 0.0:
                raise ValueError("trace mode needs a positive sample period")
            tr.setflags(write=False)
            object.__setattr__(self, "trace", tr)
            ts = np.arange(tr.shape[0]) * self.sample_period
            object.__setattr__(self, "_spline", CubicSpline(ts, tr, axis=0))

    @classmethod
    def still(cls) -> "MotionProfile":
        return cls()

    @classmethod
    def sinusoidal(cls, roll=(0.0, 1.0), pitch=(0.0, 1.0), yaw=(0.0, 1.0),
                   lever_arm: float = 0.5) -> "MotionProfile":
        """Build from ``(amplitude_rad, period_s[, phase_rad])`` tuples."""
        axes = [tuple(a) + (0.0,) * (3 - len(a)) for a in (roll, pitch, yaw)]
        return cls(amplitude=[a[0] for a in axes], period=[a[1] for a in axes],
                   phase=[a[2] for a in axes], lever_arm=lever_arm)

    @classmethod
    def from_trace_csv(cls, path, lever_arm: float = 0.5) -> "MotionProfile":
        """Load a ``t,roll,pitch,yaw`` CSV (seconds, radians) sampled uniformly."""
        with open(Path(path), newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"t", "roll", "pitch", "yaw"} - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"trace {path}: missing columns {sorted(missing)}")
            rows = [(float(r["t"]), float(r["roll"]), float(r["pitch"]), float(r["yaw"]))
                    for r in reader]
        data = np.array(rows)
        if len(data) < 2:
            raise ValueError(f"trace {path}: need at least two samples")
        dts = np.diff(data[:, 0])
        if abs(data[0, 0]) > 1e-9 or np.ptp(dts) > 1e-6 * max(dts.mean(), 1e-12):
            raise ValueError(f"trace {path}: samples must start at t=0 and be uniform")
        return cls(trace=data[:, 1:], sample_period=float(dts.mean()), lever_arm=lever_arm)

    @property
    def is_trace(self) -> bool:
        return self.trace is not None

    @property
    def duration(self) -> float:
        if self.trace is None:
            return np.inf
        return (self.trace.shape[0] - 1) * self.sample_period


def _angles(profile: MotionProfile, t: float):
    if profile.trace is not None:
        if t > profile.duration + 1e-12:
            raise ValueError(f"t = {t} s is beyond the end of the base-motion trace "
                             f"({profile.duration} s)")
        s = profile._spline
        return s(t), s(t, 1), s(t, 2)
    w = 2.0 * np.pi / profile.period
    arg = w * t + profile.phase
    A = profile.amplitude
    return A * np.sin(arg), A * w * np.cos(arg), -A * w * w * np.sin(arg)


def _cross(a, b) -> np.ndarray:
    # np.cross carries a lot of per-call overhead for single 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def _euler_rates_to_world(rpy, rate, acc):
    """Angular velocity/acceleration (world frame) of ``Rz(y) Ry(p) Rx(r)``."""
    _, pitch, yaw = rpy
    rd, pd, yd = rate
    rdd, pdd, ydd = acc
    cy, sy, cp, sp = np.cos(yaw), np.sin(yaw), np.cos(pitch), np.sin(pitch)
    e_yaw = _Z
    e_pitch = np.array([-sy, cy, 0.0])            # Rz(yaw) y
    e_roll = np.array([cy * cp, sy * cp, -sp])    # Rz(yaw) Ry(pitch) x
    omega = yd * e_yaw + pd * e_pitch + rd * e_roll
    w_zy = yd * e_yaw + pd * e_pitch
    alpha = (ydd * e_yaw + pdd * e_pitch + rdd * e_roll
             + pd * _cross(yd * e_yaw, e_pitch) + rd * _cross(w_zy, e_roll))
    return omega, alpha


def sample(profile: MotionProfile, t: float) -> BaseState:
    """Base state at time ``t >= 0``."""
    if t < 0.0:
        raise ValueError("t must be non-negative")
    rpy, rate, acc = (np.asarray(a, dtype=float) for a in _angles(profile, t))
    omega, alpha = _euler_rates_to_world(rpy, rate, acc)
    R = rpy_to_matrix(*rpy)
    lever = profile.lever_arm * _Z
    r = R @ lever
    position = r - lever
    velocity = _cross(omega, r)
    linear_acc = _cross(alpha, r) + _cross(omega, _cross(omega, r))
    if profile.heave_amplitude != 0.0 and profile.trace is None:
        wh = 2.0 * np.pi / profile.heave_period
        Ah = profile.heave_amplitude
        position = position + Ah * np.sin(wh * t) * _Z
        velocity = velocity + Ah * wh * np.cos(wh * t) * _Z
        linear_acc = linear_acc - Ah * wh * wh * np.sin(wh * t) * _Z
    return BaseState(float(t), rpy, rate, acc, omega, alpha, position, velocity, linear_acc)
