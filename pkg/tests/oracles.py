"""Reference computations used by several test modules."""
from __future__ import annotations

import numpy as np

from floatarm.qp import QpProblem


def random_qp(rng, n: int, m: int) -> QpProblem:
    """Strictly convex QP whose constraints are feasible by construction."""
    M = rng.normal(size=(n, n))
    P = M @ M.T / n + 0.1 * np.eye(n)
    g = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    Ax = A @ rng.normal(size=n)
    lb = Ax - rng.uniform(0.0, 1.0, m)
    ub = Ax + rng.uniform(0.0, 1.0, m)
    lb[rng.random(m) < 0.2] = -np.inf
    ub[rng.random(m) < 0.1] = np.inf
    return QpProblem(P, g, A, lb, ub)


def projected_gradient_qp(p: QpProblem, tol: float = 1e-10, max_iter: int = 500_000):
    """Accelerated projected gradient on the dual of a strictly convex QP.

    The two-sided rows become ``B x <= c`` with multipliers ``lam >= 0``; the
    projection onto the non-negative orthant is exact, and the primal point
    is the Lagrangian minimiser ``x = -P^-1 (g + B' lam)``. Iterates until
    the primal violation and the duality gap are both below ``tol``.
    """
    Pinv = np.linalg.inv(p.P)
    up, lo = np.isfinite(p.ub), np.isfinite(p.lb)
    B = np.vstack((p.A[up], -p.A[lo]))
    c = np.concatenate((p.ub[up], -p.lb[lo]))

    def primal(lam):
        return -Pinv @ (p.g + B.T @ lam)

    if B.shape[0] == 0:
        return primal(np.zeros(0))
    L = np.linalg.eigvalsh(B @ Pinv @ B.T)[-1]
    lam = np.zeros(len(c))
    y = lam.copy()
    tk = 1.0
    for it in range(max_iter):
        new = np.maximum(y - (c - B @ primal(y)) / L, 0.0)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        if (new - lam) @ (y - new) > 0.0:
            # adaptive restart keeps the momentum from overshooting
            t_next, y = 1.0, new
        else:
            y = new + (tk - 1.0) / t_next * (new - lam)
        lam, tk = new, t_next
        if it % 10 == 0:
            x = primal(lam)
            viol = max(0.0, float(np.max(B @ x - c)))
            if viol < tol and abs(lam @ (c - B @ x)) < tol:
                return x
    raise RuntimeError("projected-gradient oracle did not converge")
