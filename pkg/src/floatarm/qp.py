"""Dense convex QP solver based on ADMM operator splitting.

Solves ``min 1/2 x'Px + g'x  s.t.  lb <= Ax <= ub`` with the splitting
``z = Ax``: one factorisation of ``P + sigma I + rho A'A`` per problem, a
fixed penalty ``rho`` and over-relaxation ``alpha``. The data are first
equilibrated (modified Ruiz scaling of the KKT matrix plus a cost scale),
which keeps the iteration count low without adapting ``rho``. After convergence the
active set read off the dual variable is used for an optional polishing
solve of the reduced KKT system, which is kept only if it is at least as
accurate.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._backend import kernels


class QpStatus(str, Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max-iterations"
    INFEASIBLE = "infeasible"


_STATUS = {0: QpStatus.OPTIMAL, 1: QpStatus.MAX_ITERATIONS, 2: QpStatus.INFEASIBLE}


@dataclass(frozen=True)
class QpProblem:
    P: np.ndarray
    g: np.ndarray
    A: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        P = np.ascontiguousarray(self.P, dtype=float)
        g = np.ascontiguousarray(self.g, dtype=float).reshape(-1)
        n = g.shape[0]
        if P.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}, got {P.shape}")
        if not np.allclose(P, P.T, atol=1e-10, rtol=0.0):
            raise ValueError("P must be symmetric")
        A = np.ascontiguousarray(self.A, dtype=float)
        if A.size == 0:
            A = np.zeros((0, n))
        if A.ndim != 2 or A.shape[1] != n:
            raise ValueError(f"A must have {n} columns, got shape {A.shape}")
        m = A.shape[0]
        lb = np.ascontiguousarray(self.lb, dtype=float).reshape(-1)
        ub = np.ascontiguousarray(self.ub, dtype=float).reshape(-1)
        if lb.shape != (m,) or ub.shape != (m,):
            raise ValueError("lb/ub must match the number of constraint rows")
        if np.any(lb > ub):
            raise ValueError("lb must not exceed ub")
        for name, v in (("P", P), ("g", g), ("A", A), ("lb", lb), ("ub", ub)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def unconstrained(cls, P, g) -> "QpProblem":
        n = len(g)
        return cls(P, g, np.zeros((0, n)), np.zeros(0), np.zeros(0))

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.g @ x)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    objective: float
    iterations: int
    status: QpStatus
    primal_residual: float
    dual_residual: float
    y: np.ndarray
    polished: bool = False

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def _residuals(p: QpProblem, x, z, y):
    rp = float(np.max(np.abs(p.A @ x - z))) if p.m else 0.0
    rd = float(np.max(np.abs(p.P @ x + p.g + p.A.T @ y))) if p.n else 0.0
    return rp, rd


def _polish(p: QpProblem, x, z, y, delta: float = 1e-9, rounds: int = 25):
    """Solve the equality-constrained QP on the active set implied by ``(z, y)``.

    The guessed set is then refined one row at a time, releasing the row
    with the most wrong-signed multiplier or else adding the most violated
    row. Returns ``None`` when no consistent set is found.
    """
    lower = (z - p.lb < -y) & np.isfinite(p.lb)
    upper = (p.ub - z < y) & np.isfinite(p.ub) & ~lower
    Kt_top = p.P + delta * np.eye(p.n)
    for _ in range(rounds):
        act = lower | upper
        Aa = p.A[act]
        b = np.where(lower, p.lb, p.ub)[act]
        k = Aa.shape[0]
        K = np.block([[Kt_top, Aa.T], [Aa, -delta * np.eye(k)]])
        rhs = np.concatenate((-p.g, b))
        try:
            sol = np.linalg.solve(K, rhs)
            # iterative refinement undoes the regularisation
            Kt = np.block([[p.P, Aa.T], [Aa, np.zeros((k, k))]])
            for _ in range(3):
                sol = sol + np.linalg.solve(K, rhs - Kt @ sol)
        except np.linalg.LinAlgError:
            return None
        xp = sol[:p.n]
        yp = np.zeros(p.m)
        yp[act] = sol[p.n:]
        Ax = p.A @ xp
        wrong = np.where(lower, yp, 0.0) - np.where(upper, yp, 0.0)
        excess = np.where(act, 0.0, np.maximum(p.lb - Ax, Ax - p.ub))
        if wrong.max(initial=0.0) > 1e-9:
            i = int(np.argmax(wrong))
            lower[i] = upper[i] = False
        elif excess.max(initial=0.0) > 1e-9:
            i = int(np.argmax(excess))
            lower[i] = Ax[i] < p.lb[i]
            upper[i] = not lower[i]
        else:
            return xp, np.clip(Ax, p.lb, p.ub), yp
    return None


class QpSolver:
    """ADMM solver with optional warm start from the previous solve.

    Args:
        tol: absolute and relative termination tolerance.
        max_iter: iteration cap.
        rho: fixed ADMM penalty.
        alpha: over-relaxation factor.
        sigma: primal regularisation of the linear system.
        warm_start: start from the previous solution when dimensions match.
        polish: refine the converged iterate on its active set.
        scaling: Ruiz equilibration passes applied before iterating (0 disables).
    """

    def __init__(self, tol: float = 1e-6, max_iter: int = 4000, rho: float = 0.1,
                 alpha: float = 1.6, sigma: float = 1e-6, warm_start: bool = True,
                 polish: bool = True, check_every: int = 5, eps_infeasible: float = 1e-6,
                 scaling: int = 10):
        self.tol = tol
        self.max_iter = max_iter
        self.rho = rho
        self.alpha = alpha
        self.sigma = sigma
        self.warm_start = warm_start
        self.polish = polish
        self.check_every = check_every
        self.eps_infeasible = eps_infeasible
        self.scaling = scaling
        self._prev = None

    def reset(self):
        self._prev = None

    def solve(self, p: QpProblem, x0=None, y0=None) -> QpSolution:
        n, m = p.n, p.m
        if x0 is not None:
            x = np.array(x0, dtype=float)
            y = np.zeros(m) if y0 is None else np.array(y0, dtype=float)
        elif self.warm_start and self._prev is not None and self._prev[0].shape == (n,) \
                and self._prev[1].shape == (m,):
            x, y = self._prev[0].copy(), self._prev[1].copy()
        else:
            x, y = np.zeros(n), np.zeros(m)
        D, E, c, Ps, gs, As = kernels.equilibrate(p.P, p.g, p.A, self.scaling)
        lbs, ubs = E * p.lb, E * p.ub
        xs, ys = x / D, y / E * c
        zs = np.clip(As @ xs, lbs, ubs) if m else np.zeros(0)
        K = Ps + self.sigma * np.eye(n)
        if m:
            K = K + self.rho * (As.T @ As)
        L = np.linalg.cholesky(K)
        its, code, _, _ = kernels.admm(Ps, gs, As, lbs, ubs, L, xs, zs, ys, self.rho,
                                       self.sigma, self.alpha, self.tol, self.tol,
                                       self.eps_infeasible, self.max_iter, self.check_every)
        x, z, y = D * xs, zs / E, E * ys / c
        rp, rd = _residuals(p, x, z, y)
        tol = self.tol
        total = its
        # convergence is judged on scaled data; tighten until the unscaled
        # residuals meet the tolerance as well
        while code == 0 and max(rp, rd) > self.tol and total < self.max_iter and tol > 1e-12:
            tol *= 0.01
            its, code, _, _ = kernels.admm(Ps, gs, As, lbs, ubs, L, xs, zs, ys, self.rho,
                                           self.sigma, self.alpha, tol, tol,
                                           self.eps_infeasible, self.max_iter - total,
                                           self.check_every)
            total += its
            x, z, y = D * xs, zs / E, E * ys / c
            rp, rd = _residuals(p, x, z, y)
        its = total
        status = _STATUS[code]
        if status is QpStatus.OPTIMAL and max(rp, rd) > self.tol:
            status = QpStatus.MAX_ITERATIONS
        polished = False
        if self.polish and status is not QpStatus.INFEASIBLE:
            cand = _polish(p, x, z, y)
            if cand is not None:
                rp2, rd2 = _residuals(p, *cand)
                # polished point must be feasible to ~round-off and not less accurate
                if max(rp2, rd2) <= max(rp, rd, 1e-9):
                    x, z, y = cand
                    rp, rd = rp2, rd2
                    polished = True
                    if rp <= self.tol and rd <= self.tol:
                        status = QpStatus.OPTIMAL
        if status is not QpStatus.INFEASIBLE:
            self._prev = (x.copy(), y.copy())
        return QpSolution(x, p.objective(x), int(its), status, float(rp), float(rd), y, polished)


def solve(p: QpProblem, tol: float = 1e-6, max_iter: int = 4000, **kwargs) -> QpSolution:
    """One-shot solve with a fresh (cold-started) solver."""
    return QpSolver(tol=tol, max_iter=max_iter, warm_start=False, **kwargs).solve(p)
