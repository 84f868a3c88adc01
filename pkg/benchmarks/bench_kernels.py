"""Time the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is called on the same inputs through both backends; the table
lists the best per-call time of ``--repeat`` rounds and the speed-up.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from floatarm import _backend
from floatarm.dynamics import default_arm
from floatarm.kinematics import JointLimits, Pose, default_chain, forward_kinematics, geometric_jacobian
from floatarm.mpc import ReferenceWindow, TrackerConfig, build_qp, velocity_bounds
from floatarm.qp import QpSolver


def mpc_problem():
    chain = default_chain()
    q = np.array([0.0, 0.6, 0.0, 1.6, 0.0, -1.1, 0.0])
    cfg = TrackerConfig()
    pose = forward_kinematics(chain, q)
    ref = ReferenceWindow.constant(Pose(pose.p + [0.02, -0.01, 0.01], pose.xi), cfg.horizon)
    return build_qp(pose, ref, geometric_jacobian(chain, q),
                    velocity_bounds(q, JointLimits.defaults(), cfg.dt), cfg)


def cases(mod):
    arm = default_arm()
    rng = np.random.default_rng(0)
    q, qd, qdd = rng.uniform(-1, 1, 7), rng.normal(size=7), rng.normal(size=7)
    w0, dw0, dv0 = rng.normal(size=3), rng.normal(size=3), np.array([0.0, 0.0, 9.81])
    p = mpc_problem()
    s = QpSolver()
    D, E, c, Ps, gs, As = mod.equilibrate(p.P, p.g, p.A, s.scaling)
    lbs, ubs = E * p.lb, E * p.ub
    L = np.linalg.cholesky(Ps + s.sigma * np.eye(p.n) + s.rho * (As.T @ As))

    def admm():
        x, y = np.zeros(p.n), np.zeros(p.m)
        z = np.clip(As @ x, lbs, ubs)
        mod.admm(Ps, gs, As, lbs, ubs, L, x, z, y, s.rho, s.sigma, s.alpha, 1e-6, 1e-6,
                 s.eps_infeasible, 4000, 25)

    return {
        "rnea": lambda: mod.rnea(*arm._packed, q, qd, qdd, w0, dw0, dv0),
        "mass_matrix": lambda: mod.mass_matrix(*arm._packed, q),
        "forward_dynamics": lambda: mod.forward_dynamics(*arm._packed, q, qd, qdd, w0, dw0, dv0),
        "equilibrate (MPC QP)": lambda: mod.equilibrate(p.P, p.g, p.A, s.scaling),
        "admm (MPC QP, cold)": admm,
    }


def best_time(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    py = cases(_backend.load("python"))
    try:
        cc = cases(_backend.load("compiled"))
    except ImportError:
        print("compiled kernels are not built; only the numpy timings are shown")
        cc = {}
    print(f"{'kernel':24s} {'numpy [us]':>12s} {'compiled [us]':>14s} {'speed-up':>9s}")
    for name, fn in py.items():
        tp = best_time(fn, args.repeat) * 1e6
        if name in cc:
            tc = best_time(cc[name], args.repeat) * 1e6
            print(f"{name:24s} {tp:12.1f} {tc:14.1f} {tp / tc:8.1f}x")
        else:
            print(f"{name:24s} {tp:12.1f} {'-':>14s} {'-':>9s}")


if __name__ == "__main__":
    main()
