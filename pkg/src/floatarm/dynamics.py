"""Floating-base arm plant and the PD-with-gravity joint controller.

The plant is the rigid 7-link chain whose mounting base follows a prescribed
:class:`~floatarm.base_motion.BaseState`. Base angular velocity, angular
acceleration and linear acceleration are injected at the root of a
recursive Newton-Euler pass, which yields the full ``M q'' + C q' +
M_mu q_u'' + C_mu q_u' + g`` torque without forming those matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ._backend import kernels
from .base_motion import BaseState, MotionProfile, sample
from .kinematics import N_JOINTS, JointLimits, KinematicChain, default_chain

GRAVITY = np.array([0.0, 0.0, -9.81])


class SimulationDiverged(RuntimeError):
    """Joint velocities left the physically plausible range during integration."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class LinkInertia:
    """Mass (kg), centre of mass (m, link frame) and inertia about the CoM (kg m^2)."""

    mass: float
    com: np.ndarray
    inertia: np.ndarray

    def __post_init__(self):
        com = np.array(self.com, dtype=float).reshape(3)
        I = np.array(self.inertia, dtype=float).reshape(3, 3)
        if not self.mass > 0.0:
            raise ValueError("link mass must be positive")
        if not np.allclose(I, I.T, atol=1e-12):
            raise ValueError("inertia tensor must be symmetric")
        ev = np.linalg.eigvalsh(I)
        if ev[0] <= 0.0:
            raise ValueError("inertia tensor must be positive definite")
        tol = 1e-12 * ev.sum()
        if ev[0] + ev[1] < ev[2] - tol:
            raise ValueError("principal moments violate the triangle inequality")
        com.setflags(write=False)
        I.setflags(write=False)
        object.__setattr__(self, "com", com)
        object.__setattr__(self, "inertia", I)

    @classmethod
    def rod(cls, mass: float, length: float, radius: float = 0.06,
            axis: int = 2) -> "LinkInertia":
        """Solid cylinder of the given length along ``axis``, CoM at its midpoint."""
        ia = 0.5 * mass * radius ** 2
        it = mass * (3.0 * radius ** 2 + length ** 2) / 12.0
        d = np.full(3, it)
        d[axis] = ia
        com = np.zeros(3)
        com[axis] = 0.5 * length
        return cls(mass, com, np.diag(d))


@dataclass(frozen=True)
class ArmModel:
    """Kinematic chain together with link inertias and reflected rotor inertia.

    ``armature`` is added to the diagonal of the joint-space inertia; it
    stands in for the motor rotors behind the gearboxes.
    """

    chain: KinematicChain
    links: tuple
    armature: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINTS))

    def __post_init__(self):
        links = tuple(self.links)
        if len(links) != N_JOINTS:
            raise ValueError("need one LinkInertia per joint")
        arm = np.array(self.armature, dtype=float).reshape(N_JOINTS)
        if np.any(arm < 0.0):
            raise ValueError("armature must be non-negative")
        arm.setflags(write=False)
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "armature", arm)
        c = self.chain
        pos = np.concatenate((c.origins[:, :3, 3], c.ee[None, :3, 3]))
        packed = (
            np.ascontiguousarray(c.origins[:, :3, :3]),
            np.ascontiguousarray(pos),
            np.ascontiguousarray(c.axes),
            np.array([l.mass for l in links]),
            np.array([l.com for l in links]),
            np.array([l.inertia for l in links]),
            np.ascontiguousarray(arm),
        )
        object.__setattr__(self, "_packed", packed)

    def scaled_masses(self, factor: float) -> "ArmModel":
        links = [LinkInertia(l.mass * factor, l.com, l.inertia * factor) for l in self.links]
        return replace(self, links=tuple(links), armature=self.armature * factor)


DEFAULT_LINK_MASSES = (3.5, 3.5, 2.5, 2.5, 1.8, 1.5, 0.5)
DEFAULT_ARMATURE = (0.4, 0.4, 0.3, 0.3, 0.1, 0.1, 0.1)


def default_arm(chain: KinematicChain | None = None,
                masses: Sequence[float] = DEFAULT_LINK_MASSES,
                armature: Sequence[float] = DEFAULT_ARMATURE) -> ArmModel:
    """Rod-like links spanning each joint-to-joint segment of ``chain``."""
    chain = chain if chain is not None else default_chain()
    lengths = chain.link_lengths()
    links = tuple(LinkInertia.rod(m, max(L, 0.05)) for m, L in zip(masses, lengths))
    return ArmModel(chain, links, np.asarray(armature, dtype=float))


def _base_terms(base: BaseState | None, g):
    """Base motion expressed in the base frame, with gravity folded into dv0."""
    g = GRAVITY if g is None else np.asarray(g, dtype=float)
    if base is None:
        z = np.zeros(3)
        return z, z, -g
    Rt = base.rotation.T
    return Rt @ base.omega, Rt @ base.alpha, Rt @ (base.linear_acc - g)


def inverse_dynamics(model: ArmModel, q, qd, qdd, base: BaseState | None = None,
                     g=None) -> np.ndarray:
    """Joint torques that produce ``qdd`` at state ``(q, qd)`` on a moving base.

    ``g`` is the world-frame gravity vector (default ``[0, 0, -9.81]``);
    ``base=None`` means a stationary, upright base.
    """
    w0, dw0, dv0 = _base_terms(base, g)
    return kernels.rnea(*model._packed, np.asarray(q, float), np.asarray(qd, float),
                        np.asarray(qdd, float), w0, dw0, dv0)


def gravity_torque(model: ArmModel, q, base: BaseState | None = None, g=None) -> np.ndarray:
    """Static torque ``g(q)``; with ``base`` given, gravity is seen through its tilt."""
    g = GRAVITY if g is None else np.asarray(g, dtype=float)
    R = np.eye(3) if base is None else base.rotation
    z = np.zeros(N_JOINTS)
    z3 = np.zeros(3)
    return kernels.rnea(*model._packed, np.asarray(q, float), z, z, z3, z3, R.T @ -g)


def mass_matrix(model: ArmModel, q) -> np.ndarray:
    """Joint-space inertia matrix, assembled column by column from unit accelerations."""
    return kernels.mass_matrix(*model._packed, np.asarray(q, float))


def forward_dynamics(model: ArmModel, q, qd, tau, base: BaseState | None = None,
                     g=None) -> np.ndarray:
    """Joint accelerations ``M^-1 (tau - bias)``.

    Raises:
        numpy.linalg.LinAlgError: the mass matrix is not positive definite,
            which points at corrupted inertia data.
    """
    w0, dw0, dv0 = _base_terms(base, g)
    return kernels.forward_dynamics(*model._packed, np.asarray(q, float),
                                    np.asarray(qd, float), np.asarray(tau, float),
                                    w0, dw0, dv0)


@dataclass(frozen=True)
class PdGains:
    """Diagonal joint stiffness ``kp`` and damping ``kd``."""

    kp: np.ndarray
    kd: np.ndarray

    def __post_init__(self):
        kp = np.array(self.kp, dtype=float).reshape(N_JOINTS)
        kd = np.array(self.kd, dtype=float).reshape(N_JOINTS)
        if np.any(kp <= 0.0) or np.any(kd <= 0.0):
            raise ValueError("PD gains must be strictly positive")
        kp.setflags(write=False)
        kd.setflags(write=False)
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)

    @classmethod
    def defaults(cls) -> "PdGains":
        return cls([150, 150, 150, 150, 70, 70, 70], [50, 50, 50, 50, 20, 20, 20])


def pd_gravity_control(q, qd, q_d, qd_d, gains: PdGains,
                       gravity_model: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """``tau = -Kp (q - q_d) - Kd (qd - qd_d) + g(q)``."""
    q = np.asarray(q, dtype=float)
    return (-gains.kp * (q - q_d) - gains.kd * (np.asarray(qd, dtype=float) - qd_d)
            + gravity_model(q))


@dataclass(frozen=True)
class SimState:
    q: np.ndarray
    qd: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(N_JOINTS)
        qd = np.array(self.qd, dtype=float).reshape(N_JOINTS)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ValueError("simulation state must be finite")
        q.setflags(write=False)
        qd.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)


Torque = np.ndarray | Callable[[np.ndarray, np.ndarray, float], np.ndarray]

SUBSTEPS = 4


def step(model: ArmModel, sim: SimState, tau: Torque, base_profile: MotionProfile | None,
         dt: float, limits: JointLimits | None = None, g=None) -> SimState:
    """Advance the plant by ``dt`` with four semi-implicit Euler substeps.

    ``tau`` is either a constant torque vector held over the step or a
    callable ``tau(q, qd, t)`` evaluated at every substep (a joint servo
    running faster than the caller).

    Raises:
        SimulationDiverged: some ``|qd_i|`` exceeds ten times its velocity limit.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    limits = limits if limits is not None else JointLimits.defaults()
    vmax = 10.0 * np.maximum(limits.qd_upper, -limits.qd_lower)
    h = dt / SUBSTEPS
    q = np.array(sim.q)
    qd = np.array(sim.qd)
    t = sim.t
    for _ in range(SUBSTEPS):
        base = sample(base_profile, t) if base_profile is not None else None
        u = tau(q, qd, t) if callable(tau) else tau
        qdd = forward_dynamics(model, q, qd, u, base, g)
        qd = qd + h * qdd
        q = q + h * qd
        t = t + h
        if not np.all(np.abs(qd) <= vmax):
            raise SimulationDiverged(
                f"joint velocity {np.max(np.abs(qd)):.3g} rad/s exceeds 10x limit at t={t:.4f} s",
                t=t)
    return SimState(q, qd, sim.t + dt)
