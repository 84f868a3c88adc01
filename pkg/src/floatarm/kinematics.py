"""Kinematics of the 7-R serial arm.

Quaternions are stored scalar-first ``[w, x, y, z]`` and composed with the
Hamilton product. Every quaternion handed out by this module is canonical,
i.e. its scalar part is non-negative.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

N_JOINTS = 7

_DEG = np.pi / 180.0


# ---------------------------------------------------------------------------
# quaternion helpers


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b`` of two scalar-first quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(a: np.ndarray) -> np.ndarray:
    return np.array([a[0], -a[1], -a[2], -a[3]])


def quat_canonical(a: np.ndarray) -> np.ndarray:
    """Normalise and flip to the representative with ``w >= 0``."""
    a = np.asarray(a, dtype=float)
    a = a / np.linalg.norm(a)
    if a[0] < 0.0:
        a = -a
    return a


def quat_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return quat_canonical(np.concatenate(([np.cos(h)], np.sin(h) * axis)))


def quat_to_matrix(a: np.ndarray) -> np.ndarray:
    w, x, y, z = a
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to canonical quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_canonical(np.array(q))


def quat_angle(a: np.ndarray) -> float:
    """Rotation angle in ``[0, pi]`` encoded by a unit quaternion."""
    return 2.0 * float(np.arctan2(np.linalg.norm(a[1:]), abs(a[0])))


def rpy_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """ZYX Euler angles to rotation matrix, ``R = Rz(yaw) Ry(pitch) Rx(roll)``."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues formula for a unit ``axis``."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def _frozen(a, shape=None) -> np.ndarray:
    a = np.array(a, dtype=float)
    if shape is not None and a.shape != shape:
        raise ValueError(f"expected shape {shape}, got {a.shape}")
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class Pose:
    """Position (m) and canonical unit quaternion orientation."""

    p: np.ndarray
    xi: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = _frozen(self.p, (3,))
        xi = np.asarray(self.xi, dtype=float)
        if xi.shape != (4,):
            raise ValueError("quaternion must have 4 components")
        n = np.linalg.norm(xi)
        if not np.isfinite(n) or abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion is not unit norm (|xi| = {n})")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "xi", _frozen(quat_canonical(xi)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        return cls(T[:3, 3], quat_from_matrix(T[:3, :3]))

    @classmethod
    def from_rotation(cls, R: np.ndarray, p) -> "Pose":
        return cls(p, quat_from_matrix(R))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.xi)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.p
        return T

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: express ``other`` (given in this frame) in the parent frame."""
        return Pose(self.p + self.rotation @ other.p, quat_mul(self.xi, other.xi))

    def inverse(self) -> "Pose":
        xi_inv = quat_conj(self.xi)
        return Pose(-(quat_to_matrix(xi_inv) @ self.p), xi_inv)

    def transform_point(self, x) -> np.ndarray:
        return self.p + self.rotation @ np.asarray(x, dtype=float)


@dataclass(frozen=True)
class TaskTwist:
    """End-effector twist: linear velocity ``v`` (m/s), angular velocity ``w`` (rad/s)."""

    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        v, w = _frozen(self.v, (3,)), _frozen(self.w, (3,))
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ValueError("twist must be finite")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_array(cls, u) -> "TaskTwist":
        u = np.asarray(u, dtype=float)
        return cls(u[:3], u[3:6])

    @classmethod
    def zero(cls) -> "TaskTwist":
        return cls(np.zeros(3), np.zeros(3))

    def as_array(self) -> np.ndarray:
        return np.concatenate((self.v, self.w))


@dataclass(frozen=True)
class JointLimits:
    """Two-sided joint position/velocity/acceleration/jerk limits (SI units)."""

    q_lower: np.ndarray
    q_upper: np.ndarray
    qd_lower: np.ndarray
    qd_upper: np.ndarray
    qdd_lower: np.ndarray
    qdd_upper: np.ndarray
    qddd_lower: np.ndarray
    qddd_upper: np.ndarray

    def __post_init__(self):
        for name in ("q", "qd", "qdd", "qddd"):
            lo = _frozen(getattr(self, name + "_lower"), (N_JOINTS,))
            hi = _frozen(getattr(self, name + "_upper"), (N_JOINTS,))
            if np.any(lo >= hi):
                raise ValueError(f"{name}: lower limit must be below upper limit")
            object.__setattr__(self, name + "_lower", lo)
            object.__setattr__(self, name + "_upper", hi)

    @classmethod
    def symmetric(cls, q, qd, qdd, qddd) -> "JointLimits":
        q, qd, qdd, qddd = (np.asarray(a, dtype=float) for a in (q, qd, qdd, qddd))
        return cls(-q, q, -qd, qd, -qdd, qdd, -qddd, qddd)

    @classmethod
    def defaults(cls) -> "JointLimits":
        """Limits of the reference 7-DoF arm (degrees converted to radians)."""
        return cls.symmetric(
            np.array([175, 120, 175, 120, 175, 120, 360]) * _DEG,
            np.array([180, 180, 180, 180, 225, 225, 225]) * _DEG,
            np.array([900, 900, 900, 900, 1125, 1125, 1125]) * _DEG,
            np.array([18, 18, 18, 18, 22.5, 22.5, 22.5]) * 1000.0 * _DEG,
        )


@dataclass(frozen=True)
class KinematicChain:
    """Seven revolute joints, each preceded by a fixed parent-to-joint transform.

    Joint ``i`` sits at ``origins[i]`` (a 4x4 rigid transform in the frame of
    joint ``i-1``, or the base for ``i = 0``) and rotates about the unit vector
    ``axes[i]`` expressed in its own frame. ``ee`` is the fixed flange
    transform after the last joint.
    """

    origins: np.ndarray
    axes: np.ndarray
    ee: np.ndarray

    def __post_init__(self):
        origins = _frozen(self.origins, (N_JOINTS, 4, 4))
        axes = _frozen(self.axes, (N_JOINTS, 3))
        ee = _frozen(self.ee, (4, 4))
        if np.any(np.abs(np.linalg.norm(axes, axis=1) - 1.0) > 1e-12):
            raise ValueError("joint axes must have unit norm")
        for T in (*origins, ee):
            R = T[:3, :3]
            if (not np.allclose(R.T @ R, np.eye(3), atol=1e-10)
                    or abs(np.linalg.det(R) - 1.0) > 1e-10
                    or not np.allclose(T[3], [0, 0, 0, 1])):
                raise ValueError("fixed transforms must be rigid")
        object.__setattr__(self, "origins", origins)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "ee", ee)

    @classmethod
    def from_offsets(cls, offsets, axes, ee_offset) -> "KinematicChain":
        """Chain whose fixed transforms are pure translations."""
        origins = np.tile(np.eye(4), (N_JOINTS, 1, 1))
        origins[:, :3, 3] = np.asarray(offsets, dtype=float)
        ee = np.eye(4)
        ee[:3, 3] = ee_offset
        axes = np.asarray(axes, dtype=float)
        axes = axes / np.linalg.norm(axes, axis=1, keepdims=True)
        return cls(origins, axes, ee)

    def link_lengths(self) -> np.ndarray:
        """Distance from each joint to the next joint (last entry: to the flange)."""
        nxt = np.concatenate((self.origins[1:, :3, 3], self.ee[None, :3, 3]))
        return np.linalg.norm(nxt, axis=1)


def default_chain() -> KinematicChain:
    """Anthropomorphic 7-R arm with alternating z/y axes.

    Shoulder 0.34 m above the base, upper arm and forearm 0.40 m each,
    0.126 m from the wrist pitch joint to the flange.
    """
    z, y = [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]
    offsets = [
        [0, 0, 0.0],
        [0, 0, 0.34],
        [0, 0, 0.20],
        [0, 0, 0.20],
        [0, 0, 0.20],
        [0, 0, 0.20],
        [0, 0, 0.06],
    ]
    return KinematicChain.from_offsets(offsets, [z, y, z, y, z, y, z], [0, 0, 0.066])


# ---------------------------------------------------------------------------
# operations


def joint_frames(chain: KinematicChain, q, base: Pose | None = None):
    """Rotation and origin of every joint frame plus the flange, in the world frame.

    Returns ``(R, p)`` with shapes ``(8, 3, 3)`` and ``(8, 3)``; index 7 is the
    flange. Joint frames are taken *after* the joint rotation.
    """
    q = np.asarray(q, dtype=float)
    if base is None:
        R, p = np.eye(3), np.zeros(3)
    else:
        R, p = base.rotation, np.array(base.p)
    Rs = np.empty((N_JOINTS + 1, 3, 3))
    ps = np.empty((N_JOINTS + 1, 3))
    for i in range(N_JOINTS):
        T = chain.origins[i]
        p = p + R @ T[:3, 3]
        R = R @ T[:3, :3] @ axis_angle_matrix(chain.axes[i], q[i])
        Rs[i], ps[i] = R, p
    p = p + R @ chain.ee[:3, 3]
    R = R @ chain.ee[:3, :3]
    Rs[N_JOINTS], ps[N_JOINTS] = R, p
    return Rs, ps


def forward_kinematics(chain: KinematicChain, q, base: Pose | None = None) -> Pose:
    """World-frame flange pose for joint angles ``q`` and base pose ``base``."""
    Rs, ps = joint_frames(chain, q, base)
    return Pose.from_rotation(Rs[-1], ps[-1])


def geometric_jacobian(chain: KinematicChain, q, base: Pose | None = None) -> np.ndarray:
    """6x7 Jacobian mapping joint rates to the flange twist ``[v; w]`` in the world frame."""
    Rs, ps = joint_frames(chain, q, base)
    z = np.einsum("kij,kj->ki", Rs[:N_JOINTS], chain.axes)
    J = np.empty((6, N_JOINTS))
    J[:3] = np.cross(z, ps[-1] - ps[:N_JOINTS]).T
    J[3:] = z.T
    return J


def pose_deviation(current: Pose, desired: Pose) -> np.ndarray:
    """Desired-minus-current deviation ``[p_d - p, vec(xi_d * xi^-1)]``.

    The quaternion product is sign-normalised so that its scalar part is
    non-negative, so the orientation half is ``sin(theta/2) * axis``.
    """
    dw, dv = desired.xi[0], desired.xi[1:]
    cw, cv = current.xi[0], current.xi[1:]
    # xi_d * conj(xi), written so that equal inputs cancel exactly
    w = dw * cw + dv @ cv
    v = cw * dv - dw * cv - np.array([dv[1] * cv[2] - dv[2] * cv[1],
                                      dv[2] * cv[0] - dv[0] * cv[2],
                                      dv[0] * cv[1] - dv[1] * cv[0]])
    if w < 0.0:
        v = -v
    return np.concatenate((desired.p - current.p, v))


def orientation_error_vector(current: Pose, desired: Pose) -> np.ndarray:
    """Rotation vector (axis * angle, rad) taking ``current`` to ``desired``."""
    dq = quat_mul(desired.xi, quat_conj(current.xi))
    if dq[0] < 0.0:
        dq = -dq
    s = np.linalg.norm(dq[1:])
    if s < 1e-15:
        return 2.0 * dq[1:]
    return 2.0 * np.arctan2(s, dq[0]) * dq[1:] / s


def damped_pinv(J: np.ndarray, rho: float) -> np.ndarray:
    """Damped pseudo-inverse ``J^T (rho I + J J^T)^-1``."""
    if rho <= 0.0:
        raise ValueError("damping must be positive")
    J = np.asarray(J, dtype=float)
    A = rho * np.eye(J.shape[0]) + J @ J.T
    return np.linalg.solve(A, J).T


def damped_pinv_velocity(J: np.ndarray, u, rho: float) -> np.ndarray:
    """Joint velocity ``J^T (rho I + J J^T)^-1 u`` for a task twist ``u``."""
    if rho <= 0.0:
        raise ValueError("damping must be positive")
    if isinstance(u, TaskTwist):
        u = u.as_array()
    J = np.asarray(J, dtype=float)
    A = rho * np.eye(J.shape[0]) + J @ J.T
    return J.T @ np.linalg.solve(A, np.asarray(u, dtype=float))


def solve_ik(chain: KinematicChain, target: Pose, q0, base: Pose | None = None,
             rho: float = 1e-4, tol: float = 1e-10, max_iter: int = 500,
             limits: JointLimits | None = None) -> np.ndarray:
    """Numerical IK by iterated damped least squares, starting from ``q0``.

    Used to place the arm on a reference at scenario start. With ``limits``
    every iterate is projected into the position limits. Raises
    ``RuntimeError`` when the target is not reached.
    """
    q = np.array(q0, dtype=float)
    if limits is not None:
        q = np.clip(q, limits.q_lower, limits.q_upper)
    for _ in range(max_iter):
        cur = forward_kinematics(chain, q, base)
        err = pose_deviation(cur, target)
        err[3:] *= 2.0
        if np.linalg.norm(err) < tol:
            return q
        q = q + damped_pinv_velocity(geometric_jacobian(chain, q, base), err, rho)
        if limits is not None:
            q = np.clip(q, limits.q_lower, limits.q_upper)
    raise RuntimeError(f"IK did not converge (residual {np.linalg.norm(err):.3e})")
