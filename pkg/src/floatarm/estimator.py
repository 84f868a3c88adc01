"""Per-joint adaptive estimator of base-motion disturbance.

The estimator adds a joint position offset ``q~_d`` to the command of a PD
position servo. Each joint keeps an integral ``a = int delta(e, e') e dt`` of
the regressor ``delta = [1, e, e']`` weighted by its own error, and the offset
is ``q~_d = -a^T H^-1 delta``. The update law never needs the servo gains.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .kinematics import N_JOINTS


@dataclass(frozen=True)
class EstimatorGains:
    """Diagonal of the positive-definite adaptation weight ``H``."""

    h: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.01, 10.0]))

    def __post_init__(self):
        h = np.array(self.h, dtype=float).reshape(3)
        if np.any(h <= 0.0):
            raise ValueError("H must have strictly positive diagonal entries")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    def scaled(self, c: float) -> "EstimatorGains":
        return EstimatorGains(self.h * c)


@dataclass(frozen=True)
class EstimatorState:
    """Integral accumulators, one row ``[int e, int e^2, int e e']`` per joint.

    ``clamps`` counts the accumulator components that saturation has held
    back so far.
    """

    accumulator: np.ndarray = field(default_factory=lambda: np.zeros((N_JOINTS, 3)))
    clamps: int = 0
    saturation: float = 50.0

    def __post_init__(self):
        acc = np.array(self.accumulator, dtype=float)
        if acc.ndim != 2 or acc.shape[1] != 3:
            raise ValueError("accumulator must be (n_joints, 3)")
        if not np.all(np.isfinite(acc)):
            raise ValueError("accumulator must be finite")
        acc.setflags(write=False)
        object.__setattr__(self, "accumulator", acc)

    @classmethod
    def zeros(cls, n: int = N_JOINTS, saturation: float = 50.0) -> "EstimatorState":
        return cls(np.zeros((n, 3)), 0, saturation)


def regressor(e, ed) -> np.ndarray:
    """``delta = [1, e, e']``; vectorised over joints (returns ``(n, 3)`` then)."""
    e = np.asarray(e, dtype=float)
    ed = np.asarray(ed, dtype=float)
    return np.stack(np.broadcast_arrays(np.ones_like(e), e, ed), axis=-1)


def update(state: EstimatorState, e, ed, H: EstimatorGains | None = None,
           dt: float = 0.01) -> EstimatorState:
    """Rectangle-rule step of the accumulator: ``a += delta(e, e') * e * dt``.

    A component already at ``+/- saturation`` stops integrating in the
    direction that would push it further (conditional anti-windup); each
    such hold is counted in ``clamps``. ``H`` is accepted for interface
    symmetry with :func:`correction` and does not enter the update.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    e = np.asarray(e, dtype=float)
    inc = regressor(e, ed) * e[:, None] * dt
    acc = state.accumulator
    lim = state.saturation
    new = acc + inc
    held = ((new > lim) & (inc > 0.0)) | ((new < -lim) & (inc < 0.0))
    new = np.where(held, np.clip(acc, -lim, lim), new)
    return replace(state, accumulator=new, clamps=state.clamps + int(held.sum()))


def correction(state: EstimatorState, e, ed, H: EstimatorGains) -> np.ndarray:
    """Added joint position command ``q~_d,i = -a_i^T H^-1 delta(e_i, e'_i)``."""
    delta = regressor(e, ed)
    return -np.sum(state.accumulator * delta / H.h, axis=1)


# ---------------------------------------------------------------------------
# single-joint linear surrogate


@dataclass
class SurrogateRun:
    t: np.ndarray
    e: np.ndarray
    ed: np.ndarray
    lyapunov: np.ndarray
    qtilde: np.ndarray
    accumulator: np.ndarray


def lyapunov_value(e: float, accumulator: np.ndarray, lam: np.ndarray, kp: float, kd: float,
                   H: EstimatorGains) -> float:
    """``V = kp kd e^2 / 2 + (l^ - l)^T H (l^ - l) / 2`` with ``l^ = -kp H^-1 a``."""
    lam_hat = -kp * np.asarray(accumulator) / H.h
    d = lam_hat - lam
    return 0.5 * kp * kd * e * e + 0.5 * float(d @ (H.h * d))


def simulate_surrogate(kp: float, kd: float, lam, H: EstimatorGains, duration: float,
                       dt: float = 1e-4, e0: float = 0.0,
                       eps: Callable[[float], float] | None = None,
                       estimator: bool = True) -> SurrogateRun:
    """Closed loop of one joint whose disturbance is linear in ``[1, e, e']``.

    The plant is ``kp e + kd e' = kp q~_d - (lam^T delta + eps(t))``. Since
    ``q~_d`` and the disturbance both depend on ``e'``, the velocity is
    obtained from the resulting scalar linear equation at each step, then
    ``e`` is advanced with explicit Euler and the accumulator with the
    rectangle rule of :func:`update` (no saturation), written out in scalars
    because the loop runs for ``10^5`` steps and more.
    """
    lam = np.asarray(lam, dtype=float)
    n = int(round(duration / dt))
    e = float(e0)
    ts = np.arange(n + 1) * dt
    es = np.empty(n + 1)
    eds = np.empty(n + 1)
    vs = np.empty(n + 1)
    qs = np.empty(n + 1)
    h1, h2, h3 = (float(v) for v in H.h)
    l1, l2, l3 = (float(v) for v in lam)
    a1 = a2 = a3 = 0.0
    for k in range(n + 1):
        ek = eps(ts[k]) if eps is not None else 0.0
        # kd e' = -kp (a1/h1 + a2 e/h2 + a3 e'/h3) - kp e - lam1 - lam2 e - lam3 e' - eps
        num = -kp * (a1 / h1 + a2 * e / h2) - kp * e - l1 - l2 * e - ek
        den = kd + l3 + kp * a3 / h3
        ed = num / den
        es[k] = e
        eds[k] = ed
        # V = kp kd e^2 / 2 + sum h_j (l^_j - l_j)^2 / 2 with l^ = -kp a / h
        d1, d2, d3 = -kp * a1 / h1 - l1, -kp * a2 / h2 - l2, -kp * a3 / h3 - l3
        vs[k] = 0.5 * kp * kd * e * e + 0.5 * (h1 * d1 * d1 + h2 * d2 * d2 + h3 * d3 * d3)
        qs[k] = -(a1 / h1 + a2 * e / h2 + a3 * ed / h3)
        if k == n:
            break
        if estimator:
            a1 += e * dt
            a2 += e * e * dt
            a3 += ed * e * dt
        e = e + dt * ed
    return SurrogateRun(ts, es, eds, vs, qs, np.array([a1, a2, a3]))
