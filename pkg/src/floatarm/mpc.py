"""Task-space MPC tracker and the resolved-rate baseline.

The tracker predicts the 6-D pose deviation with the integrator model
``X~[k+1] = X~[k] + dt u[k]`` over ``N_p`` steps, holding the Jacobian fixed,
and solves for the stacked end-effector twists ``u[0..N_p-1]``. Joint limits
enter as bounds on ``J# u[k]`` where ``J#`` is the damped pseudo-inverse; the
bounds come from the position, velocity, acceleration and jerk limits
through a stopping-distance argument (see :func:`velocity_bounds`). Only
``u[0]`` is applied.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .kinematics import (N_JOINTS, JointLimits, Pose, TaskTwist, damped_pinv,
                         pose_deviation)
from .qp import QpProblem, QpSolution, QpSolver, QpStatus

log = logging.getLogger(__name__)


def _psd(M, name):
    M = np.array(M, dtype=float)
    if M.shape != (6, 6):
        raise ValueError(f"{name} must be 6x6")
    if not np.allclose(M, M.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M)[0] < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")
    M.setflags(write=False)
    return M


@dataclass(frozen=True)
class TrackerConfig:
    """Weights and timing of the tracker plus the baseline gain ``K``.

    Defaults: ``Q = 100 I``, ``R = 0.1 I``, ``N_p = 10``, ``dt = 0.01 s``,
    ``rho = 0.01``, ``K = diag(60, 60, 60, 40, 40, 40)``.
    """

    Q: np.ndarray = field(default_factory=lambda: 100.0 * np.eye(6))
    R: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(6))
    horizon: int = 10
    dt: float = 0.01
    rho: float = 0.01
    K: np.ndarray = field(default_factory=lambda: np.diag([60.0, 60, 60, 40, 40, 40]))

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.rho <= 0.0:
            raise ValueError("rho must be positive")
        object.__setattr__(self, "Q", _psd(self.Q, "Q"))
        object.__setattr__(self, "R", _psd(self.R, "R"))
        object.__setattr__(self, "K", _psd(self.K, "K"))


@dataclass(frozen=True)
class ReferenceWindow:
    """Desired world-frame poses at ``t_k, t_k + dt, ..., t_k + N_p dt``."""

    poses: tuple

    def __post_init__(self):
        poses = tuple(self.poses)
        if len(poses) < 2:
            raise ValueError("a reference window needs at least two poses")
        if not all(isinstance(p, Pose) for p in poses):
            raise TypeError("reference entries must be Pose values")
        object.__setattr__(self, "poses", poses)

    @classmethod
    def constant(cls, pose: Pose, horizon: int) -> "ReferenceWindow":
        return cls((pose,) * (horizon + 1))

    @property
    def horizon(self) -> int:
        return len(self.poses) - 1


def velocity_bounds(q, limits: JointLimits, dt: float):
    """Joint velocity bounds ``(g_l, g_u)`` that keep every joint able to stop in range.

    Per joint, ``g_u = min(dq_u/dt, qd_u, sqrt(2 qdd_u dq_u), (4.5 qddd_u dq_u^2)^(1/3))``
    with ``dq_u = q_u - q``, and ``g_l`` mirrors it with the lower limits.
    A ``q`` marginally outside its range is clamped first.
    """
    q = np.asarray(q, dtype=float)
    qc = np.clip(q, limits.q_lower, limits.q_upper)
    if np.any(qc != q):
        log.debug("velocity_bounds: q outside position limits by %.3g rad",
                  float(np.max(np.abs(qc - q))))
    du = limits.q_upper - qc
    dl = qc - limits.q_lower
    gu = np.minimum.reduce([
        du / dt,
        limits.qd_upper,
        np.sqrt(2.0 * limits.qdd_upper * du),
        np.cbrt(4.5 * limits.qddd_upper * du * du),
    ])
    gl = -np.minimum.reduce([
        dl / dt,
        -limits.qd_lower,
        np.sqrt(-2.0 * limits.qdd_lower * dl),
        np.cbrt(-4.5 * limits.qddd_lower * dl * dl),
    ])
    return gl, gu


def _integrator(horizon: int, dt: float) -> np.ndarray:
    """Block lower-triangular ``S`` with ``X~[1..N_p] = S u[0..N_p-1]``."""
    return np.kron(np.tril(np.ones((horizon, horizon))), dt * np.eye(6))


def build_qp(current: Pose, ref: ReferenceWindow, J: np.ndarray, bounds,
             cfg: TrackerConfig) -> QpProblem:
    """Condensed QP in the stacked twists ``u[0..N_p-1]``.

    ``sum_k |X~[k] - X~_d[k]|_Q^2 + |u[k-1]|_R^2`` for ``k = 1..N_p`` with
    ``X~_d[k]`` the deviation of ``ref.poses[k]`` from ``current``, subject to
    ``g_l <= J# u[k] <= g_u`` at every step.
    """
    N = cfg.horizon
    J = np.asarray(J, dtype=float)
    if J.shape != (6, N_JOINTS):
        raise ValueError(f"Jacobian must be 6x{N_JOINTS}, got {J.shape}")
    if ref.horizon != N:
        raise ValueError(f"reference covers {ref.horizon} steps, tracker horizon is {N}")
    gl, gu = (np.asarray(b, dtype=float).reshape(N_JOINTS) for b in bounds)
    if not (np.all(np.isfinite(gl)) and np.all(np.isfinite(gu))):
        raise ValueError("velocity bounds must be finite")
    Xd = np.concatenate([pose_deviation(current, p) for p in ref.poses[1:]])
    S = _integrator(N, cfg.dt)
    Qb = np.kron(np.eye(N), cfg.Q)
    Rb = np.kron(np.eye(N), cfg.R)
    SQ = S.T @ Qb
    P = 2.0 * (SQ @ S + Rb)
    P = 0.5 * (P + P.T)
    g = -2.0 * SQ @ Xd
    A = np.kron(np.eye(N), damped_pinv(J, cfg.rho))
    return QpProblem(P, g, A, np.tile(gl, N), np.tile(gu, N))


@dataclass(frozen=True)
class ControlOutput:
    """One tick of a task-space controller.

    Attributes:
        u: applied task twist (world frame).
        q_bar_d: desired joint position for the servo.
        qd_cmd: joint velocity command ``J# u``.
        qp_iters: QP iterations (0 for the baseline).
        status: QP status, or ``None`` for the baseline.
        scaled: ``True`` if the command had to be shrunk to respect the bounds.
    """

    u: TaskTwist
    q_bar_d: np.ndarray
    qd_cmd: np.ndarray
    qp_iters: int = 0
    status: QpStatus | None = None
    scaled: bool = False


def _fit_to_bounds(qd, gl, gu):
    """Largest ``s in [0, 1]`` with ``g_l <= s qd <= g_u`` (needs ``g_l <= 0 <= g_u``)."""
    s = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        hi = np.where(qd > gu, gu / qd, 1.0)
        lo = np.where(qd < gl, gl / qd, 1.0)
    s = min(s, float(np.min(hi)), float(np.min(lo)))
    return max(s, 0.0)


def control_step(current: Pose, ref: ReferenceWindow, q, J, limits: JointLimits,
                 cfg: TrackerConfig, qp_solver: QpSolver, q_ref=None) -> ControlOutput:
    """Solve the tracking QP and turn ``u[0]`` into a joint command.

    ``q_bar_d = q_ref + J# u[0] dt`` where ``q_ref`` defaults to the measured
    ``q``. If the solver stops at the iteration cap the best iterate is used
    and a warning is logged; an infeasible report yields a zero twist. The
    applied command always satisfies the velocity bounds: if the iterate
    overshoots them slightly it is scaled back toward zero.
    """
    q = np.asarray(q, dtype=float)
    gl, gu = velocity_bounds(q, limits, cfg.dt)
    gl = np.minimum(gl, 0.0)
    gu = np.maximum(gu, 0.0)
    prob = build_qp(current, ref, J, (gl, gu), cfg)
    sol: QpSolution = qp_solver.solve(prob)
    if sol.status is QpStatus.INFEASIBLE:
        log.warning("tracking QP reported infeasible; commanding zero twist")
        u0 = np.zeros(6)
    else:
        if sol.status is QpStatus.MAX_ITERATIONS:
            log.warning("tracking QP hit the iteration cap (residuals %.2e / %.2e)",
                        sol.primal_residual, sol.dual_residual)
        u0 = sol.x[:6].copy()
    Jp = prob.A[:N_JOINTS, :6]
    qd = Jp @ u0
    s = _fit_to_bounds(qd, gl, gu)
    if s < 1.0:
        u0 *= s
        qd = Jp @ u0
        np.clip(qd, gl, gu, out=qd)
    base = q if q_ref is None else np.asarray(q_ref, dtype=float)
    return ControlOutput(TaskTwist.from_array(u0), base + qd * cfg.dt, qd,
                         sol.iterations, sol.status, s < 1.0)


def traditional_step(current: Pose, desired: Pose, xd_dot, K, J, rho: float, q,
                     dt: float, limits: JointLimits | None = None, q_ref=None) -> ControlOutput:
    """Resolved-rate baseline ``u = xd_dot + K (x_d - x)`` through the damped pseudo-inverse.

    No constraint handling beyond clipping the joint rates to the velocity
    limits (logged when it happens).
    """
    if isinstance(xd_dot, TaskTwist):
        xd_dot = xd_dot.as_array()
    u = np.asarray(xd_dot, dtype=float) + np.asarray(K, dtype=float) @ pose_deviation(current, desired)
    qd = damped_pinv(J, rho) @ u
    if limits is not None:
        clipped = np.clip(qd, limits.qd_lower, limits.qd_upper)
        if np.any(clipped != qd):
            log.debug("traditional_step: joint rate clipped to velocity limits")
            qd = clipped
    base = np.asarray(q if q_ref is None else q_ref, dtype=float)
    return ControlOutput(TaskTwist.from_array(u), base + qd * dt, qd)


class MpcTracker:
    """Stateful wrapper holding the warm-started solver of one control loop."""

    def __init__(self, cfg: TrackerConfig | None = None, limits: JointLimits | None = None,
                 solver: QpSolver | None = None):
        self.cfg = cfg if cfg is not None else TrackerConfig()
        self.limits = limits if limits is not None else JointLimits.defaults()
        self.solver = solver if solver is not None else QpSolver()

    def step(self, current: Pose, ref: ReferenceWindow, q, J, q_ref=None) -> ControlOutput:
        return control_step(current, ref, q, J, self.limits, self.cfg, self.solver, q_ref)
