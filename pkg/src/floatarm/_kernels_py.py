"""Pure-Python/numpy versions of the hot kernels.

These define the reference semantics; ``_kernels.pyx`` mirrors them line for
line and the test-suite checks that both agree.

Array conventions for the dynamics kernels (all float64):
    rot     (n, 3, 3)  fixed rotation of joint i relative to joint i-1
    pos     (n + 1, 3) fixed offset of joint i in frame i-1; row n is the flange
    axes    (n, 3)     joint axes in their own frames
    mass    (n,)       link masses
    com     (n, 3)     centres of mass in link frames
    inertia (n, 3, 3)  inertia tensors about the CoM, link frames
    armature (n,)      reflected rotor inertia per joint
    w0, dw0, dv0       base angular velocity, angular acceleration and
                       (linear acceleration - gravity), base frame
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

STATUS_SOLVED = 0
STATUS_MAX_ITER = 1
STATUS_INFEASIBLE = 2


def _axis_rot(a, angle):
    x, y, z = a
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def rnea(rot, pos, axes, mass, com, inertia, armature, q, qd, qdd, w0, dw0, dv0):
    """Recursive Newton-Euler joint torques for a base moving with (w0, dw0, dv0)."""
    n = len(q)
    Rl = np.empty((n, 3, 3))
    w = np.asarray(w0, dtype=float)
    dw = np.asarray(dw0, dtype=float)
    dv = np.asarray(dv0, dtype=float)
    F = np.empty((n, 3))
    N = np.empty((n, 3))
    for i in range(n):
        R = rot[i] @ _axis_rot(axes[i], q[i])
        Rl[i] = R
        p = pos[i]
        Rt = R.T
        dv = Rt @ (dv + np.cross(dw, p) + np.cross(w, np.cross(w, p)))
        wp = Rt @ w
        a = axes[i]
        w = wp + qd[i] * a
        dw = Rt @ dw + qd[i] * np.cross(wp, a) + qdd[i] * a
        c = com[i]
        dvc = dv + np.cross(dw, c) + np.cross(w, np.cross(w, c))
        F[i] = mass[i] * dvc
        I = inertia[i]
        N[i] = I @ dw + np.cross(w, I @ w)
    tau = np.empty(n)
    f = np.zeros(3)
    nm = np.zeros(3)
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            R = Rl[i + 1]
            fc = R @ f
            nm = R @ nm + np.cross(pos[i + 1], fc)
            f = fc
        nm = nm + N[i] + np.cross(com[i], F[i])
        f = f + F[i]
        tau[i] = nm @ axes[i] + armature[i] * qdd[i]
    return tau


def mass_matrix(rot, pos, axes, mass, com, inertia, armature, q):
    """Joint-space inertia matrix by unit-acceleration probing of ``rnea``."""
    n = len(q)
    M = np.empty((n, n))
    zero = np.zeros(n)
    z3 = np.zeros(3)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        M[:, j] = rnea(rot, pos, axes, mass, com, inertia, armature, q, zero, e, z3, z3, z3)
    return M


def forward_dynamics(rot, pos, axes, mass, com, inertia, armature, q, qd, tau, w0, dw0, dv0):
    """Joint accelerations ``M^-1 (tau - bias)``; raises ``LinAlgError`` if M is not SPD."""
    n = len(q)
    bias = rnea(rot, pos, axes, mass, com, inertia, armature, q, qd, np.zeros(n), w0, dw0, dv0)
    M = mass_matrix(rot, pos, axes, mass, com, inertia, armature, q)
    M = 0.5 * (M + M.T)
    L = np.linalg.cholesky(M)
    y = np.linalg.solve(L, tau - bias)
    return np.linalg.solve(L.T, y)


def _cho_solve(L, b):
    y = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L, y, lower=True, trans="T", check_finite=False)


def admm(P, g, A, lb, ub, L, x, z, y, rho, sigma, alpha, eps_abs, eps_rel,
         eps_pinf, max_iter, check_every):
    """Operator-splitting iterations for ``min 1/2 x'Px + g'x  s.t. lb <= Ax <= ub``.

    ``L`` is the lower Cholesky factor of ``P + sigma I + rho A'A``. ``x``,
    ``z`` and ``y`` are updated in place. Returns
    ``(iterations, status, primal_residual, dual_residual)``.
    """
    m = A.shape[0]
    status = STATUS_MAX_ITER
    rp = rd = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        rhs = sigma * x - g
        if m:
            rhs = rhs + A.T @ (rho * z - y)
        xt = _cho_solve(L, rhs)
        x_new = alpha * xt + (1.0 - alpha) * x
        if m:
            zt = A @ xt
            zr = alpha * zt + (1.0 - alpha) * z
            z_new = np.minimum(np.maximum(zr + y / rho, lb), ub)
            dy = rho * (zr - z_new)
            y += dy
            z[:] = z_new
        x[:] = x_new
        if it % check_every == 0 or it == max_iter:
            Ax = A @ x
            Px = P @ x
            ATy = A.T @ y
            rp = float(np.max(np.abs(Ax - z))) if m else 0.0
            rd = float(np.max(np.abs(Px + g + ATy)))
            ep = eps_abs + eps_rel * max(float(np.max(np.abs(Ax))) if m else 0.0,
                                         float(np.max(np.abs(z))) if m else 0.0)
            ed = eps_abs + eps_rel * max(float(np.max(np.abs(Px))), float(np.max(np.abs(ATy))),
                                         float(np.max(np.abs(g))))
            if rp <= ep and rd <= ed:
                status = STATUS_SOLVED
                break
            if m and _infeasible(A, lb, ub, dy, eps_pinf):
                status = STATUS_INFEASIBLE
                break
    return it, status, rp, rd


def _infeasible(A, lb, ub, dy, eps):
    ndy = float(np.max(np.abs(dy)))
    if ndy <= 1e-12:
        return False
    if float(np.max(np.abs(A.T @ dy))) > eps * ndy:
        return False
    pos = np.maximum(dy, 0.0)
    neg = np.minimum(dy, 0.0)
    if np.any((pos > 0) & ~np.isfinite(ub)) or np.any((neg < 0) & ~np.isfinite(lb)):
        return False
    val = float(np.sum(np.where(pos > 0, ub * pos, 0.0)) + np.sum(np.where(neg < 0, lb * neg, 0.0)))
    return val < -eps * ndy


def equilibrate(P, g, A, iters):
    """Modified Ruiz scaling: returns ``(D, E, c, Ps, gs, As)``.

    ``D`` scales the variables, ``E`` the constraint rows and ``c`` the
    cost, so that ``Ps = c D P D``, ``gs = c D g`` and ``As = E A D``.
    """
    n, m = P.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    c = 1.0
    Ps, gs, As = P.copy(), g.copy(), A.copy()
    for _ in range(iters):
        col = np.max(np.abs(Ps), axis=0)
        if m:
            col = np.maximum(col, np.max(np.abs(As), axis=0))
        dn = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
        Ps = dn[:, None] * Ps * dn[None, :]
        gs = dn * gs
        if m:
            em = 1.0 / np.sqrt(np.clip(np.max(np.abs(As), axis=1), 1e-4, 1e4))
            As = em[:, None] * As * dn[None, :]
            E = E * em
        D = D * dn
        # cost scaling keeps the objective's curvature and slope near unity
        avg = np.mean(np.max(np.abs(Ps), axis=0))
        gmax = np.max(np.abs(gs)) if n else 0.0
        cs = 1.0 / min(max(max(avg, gmax), 1e-4), 1e4)
        Ps = Ps * cs
        gs = gs * cs
        c *= cs
    return D, E, c, Ps, gs, As
