import json
import os
import subprocess
import sys

import numpy as np
import pytest

from floatarm import _backend
from floatarm.dynamics import default_arm
from floatarm.qp import QpSolver

from conftest import SCENARIOS
from oracles import random_qp

compiled = pytest.importorskip("floatarm._kernels", reason="compiled kernels not built")
python = _backend.load("python")


def test_default_backend_is_compiled():
    assert _backend.BACKEND == "compiled"
    with pytest.raises(ValueError):
        _backend.load("fortran")


def dyn_args(rng, arm):
    q = rng.uniform(-2, 2, 7)
    qd = rng.normal(size=7)
    qdd = rng.normal(size=7)
    w0, dw0, dv0 = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3) + [0, 0, 9.81]
    return q, qd, qdd, w0, dw0, dv0


def test_rnea_agrees(rng):
    arm = default_arm()
    for _ in range(50):
        q, qd, qdd, w0, dw0, dv0 = dyn_args(rng, arm)
        a = compiled.rnea(*arm._packed, q, qd, qdd, w0, dw0, dv0)
        b = python.rnea(*arm._packed, q, qd, qdd, w0, dw0, dv0)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-11)


def test_mass_matrix_and_forward_dynamics_agree(rng):
    arm = default_arm()
    for _ in range(50):
        q, qd, tau, w0, dw0, dv0 = dyn_args(rng, arm)
        np.testing.assert_allclose(compiled.mass_matrix(*arm._packed, q),
                                   python.mass_matrix(*arm._packed, q), rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(
            compiled.forward_dynamics(*arm._packed, q, qd, tau, w0, dw0, dv0),
            python.forward_dynamics(*arm._packed, q, qd, tau, w0, dw0, dv0),
            rtol=1e-9, atol=1e-9)


def test_equilibration_agrees(rng):
    for _ in range(20):
        p = random_qp(rng, int(rng.integers(1, 30)), int(rng.integers(0, 30)))
        for a, b in zip(compiled.equilibrate(p.P, p.g, p.A, 10),
                        python.equilibrate(p.P, p.g, p.A, 10)):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def admm_once(mod, p, iters):
    s = QpSolver()
    D, E, c, Ps, gs, As = python.equilibrate(p.P, p.g, p.A, s.scaling)
    lbs, ubs = E * p.lb, E * p.ub
    L = np.linalg.cholesky(Ps + s.sigma * np.eye(p.n) + s.rho * (As.T @ As))
    x, y = np.zeros(p.n), np.zeros(p.m)
    z = np.clip(As @ x, lbs, ubs)
    out = mod.admm(Ps, gs, As, lbs, ubs, L, x, z, y, s.rho, s.sigma, s.alpha, 1e-9, 1e-9,
                   s.eps_infeasible, iters, 25)
    return out, x, z, y


def test_admm_iterations_agree(rng):
    for _ in range(20):
        p = random_qp(rng, int(rng.integers(1, 30)), int(rng.integers(0, 30)))
        (ia, ca, _, _), *va = admm_once(compiled, p, 200)
        (ib, cb, _, _), *vb = admm_once(python, p, 200)
        assert (ia, ca) == (ib, cb)
        for a, b in zip(va, vb):
            np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-10)


def run_short(tmp_path, pure):
    env = dict(os.environ)
    env.pop("FLOATARM_PURE_PYTHON", None)
    if pure:
        env["FLOATARM_PURE_PYTHON"] = "1"
    out = tmp_path / ("py" if pure else "c")
    scn = tmp_path / "circle2.toml"
    scn.write_text((SCENARIOS / "circle.toml").read_text()
                   .replace("duration_s = 60.0", "duration_s = 2.0"))
    code = ("import sys; from floatarm import _backend; from floatarm.cli import main; "
            "print(_backend.BACKEND); sys.exit(main(sys.argv[1:]))")
    proc = subprocess.run([sys.executable, "-c", code, "run", str(scn),
                           "--out", str(out)], env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc.stdout.splitlines()[0], json.loads((out / "summary.json").read_text())


@pytest.mark.slow
def test_closed_loop_agrees_across_backends(tmp_path):
    name_c, c = run_short(tmp_path, False)
    name_p, p = run_short(tmp_path, True)
    assert (name_c, name_p) == ("compiled", "python")
    for k in ("avg_position", "max_position", "avg_orientation_deg", "max_orientation_deg"):
        assert c[k] == pytest.approx(p[k], rel=1e-6)
