import numpy as np
import pytest

from floatarm.base_motion import MotionProfile, sample
from floatarm.dynamics import (GRAVITY, LinkInertia, PdGains, SimState, SimulationDiverged,
                               forward_dynamics, gravity_torque, inverse_dynamics, mass_matrix,
                               pd_gravity_control, step)
from floatarm.kinematics import joint_frames

DEG = np.pi / 180
WAVE = MotionProfile.sinusoidal(roll=(6 * DEG, 1.67), pitch=(3 * DEG, 2.1))


def link_points(arm, q, base_pose):
    """World CoM, rotation, joint origin and joint axis of every link."""
    Rs, ps = joint_frames(arm.chain, q, base_pose)
    com = np.array([Rs[j] @ arm.links[j].com + ps[j] for j in range(7)])
    axes = np.array([Rs[j] @ arm.chain.axes[j] for j in range(7)])
    return com, Rs[:7], ps[:7], axes


def mass_matrix_oracle(arm, q):
    """Kinetic-energy form sum_j m J_v'J_v + J_w' I_world J_w plus rotor inertia."""
    com, R, o, z = link_points(arm, q, None)
    M = np.diag(arm.armature).astype(float)
    for j, link in enumerate(arm.links):
        Jv = np.zeros((3, 7))
        Jw = np.zeros((3, 7))
        for i in range(j + 1):
            Jv[:, i] = np.cross(z[i], com[j] - o[i])
            Jw[:, i] = z[i]
        Iw = R[j] @ link.inertia @ R[j].T
        M += link.mass * Jv.T @ Jv + Jw.T @ Iw @ Jw
    return M


def test_statics_equal_gravity_torque(arm, rng):
    for _ in range(10):
        q = rng.uniform(-2, 2, 7)
        np.testing.assert_array_equal(inverse_dynamics(arm, q, np.zeros(7), np.zeros(7)),
                                      gravity_torque(arm, q))


def test_unit_acceleration_probing_gives_mass_matrix(arm, rng):
    for _ in range(10):
        q = rng.uniform(-2, 2, 7)
        cols = np.array([inverse_dynamics(arm, q, np.zeros(7), e, g=np.zeros(3))
                         for e in np.eye(7)]).T
        M = mass_matrix(arm, q)
        np.testing.assert_allclose(cols, M, atol=1e-12)
        np.testing.assert_allclose(M, M.T, atol=1e-12)
        assert np.linalg.eigvalsh(M)[0] > 0.0
        np.testing.assert_allclose(M, mass_matrix_oracle(arm, q), atol=1e-10)


def test_frozen_arm_on_moving_base_matches_momentum_balance(arm, rng):
    h = 1e-4
    for _ in range(5):
        q = rng.uniform(-1.5, 1.5, 7)
        t = rng.uniform(0.5, 5.0)
        base = sample(WAVE, t)
        tau = inverse_dynamics(arm, q, np.zeros(7), np.zeros(7), base)
        assert np.max(np.abs(tau - gravity_torque(arm, q))) > 1e-2

        def state(s):
            b = sample(WAVE, s)
            com, R, o, z = link_points(arm, q, b.pose)
            # the frozen arm turns with the base, so every link spins at omega
            L = np.array([R[j] @ arm.links[j].inertia @ R[j].T @ b.omega for j in range(7)])
            return com, L

        com_p, L_p = state(t + h)
        com_m, L_m = state(t - h)
        com, R, o, z = link_points(arm, q, base.pose)
        acc = (com_p - 2 * com + com_m) / h**2
        Ldot = (L_p - L_m) / (2 * h)
        oracle = np.empty(7)
        for i in range(7):
            n = np.zeros(3)
            for j in range(i, 7):
                m = arm.links[j].mass
                n += np.cross(com[j] - o[i], m * (acc[j] - GRAVITY)) + Ldot[j]
            oracle[i] = z[i] @ n
        np.testing.assert_allclose(tau, oracle, atol=1e-4)


def test_forward_inverse_round_trip(arm, rng):
    for _ in range(20):
        q, qd, a = rng.uniform(-2, 2, 7), rng.uniform(-1, 1, 7), rng.uniform(-3, 3, 7)
        base = sample(WAVE, rng.uniform(0, 10))
        tau = inverse_dynamics(arm, q, qd, a, base)
        np.testing.assert_allclose(forward_dynamics(arm, q, qd, tau, base), a, atol=1e-9)


def test_gravity_torque_is_an_equilibrium(arm, rng):
    q = rng.uniform(-2, 2, 7)
    np.testing.assert_allclose(forward_dynamics(arm, q, np.zeros(7), gravity_torque(arm, q)), 0.0,
                               atol=1e-12)


def test_doubling_masses_halves_acceleration(arm, rng):
    q = rng.uniform(-2, 2, 7)
    tau = rng.normal(size=7)
    a1 = forward_dynamics(arm, q, np.zeros(7), tau, g=np.zeros(3))
    a2 = forward_dynamics(arm.scaled_masses(2.0), q, np.zeros(7), tau, g=np.zeros(3))
    np.testing.assert_allclose(a2, a1 / 2, rtol=1e-10, atol=1e-14)


def test_link_inertia_validation():
    with pytest.raises(ValueError):
        LinkInertia(0.0, np.zeros(3), np.eye(3))
    with pytest.raises(ValueError):
        LinkInertia(1.0, np.zeros(3), np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        LinkInertia(1.0, np.zeros(3), np.diag([0.1, 0.1, 1.0]))  # triangle inequality
    with pytest.raises(ValueError):
        LinkInertia(1.0, np.zeros(3), [[1, 0.1, 0], [0, 1, 0], [0, 0, 1]])


# --- PD with gravity compensation ----------------------------------------------


def test_pd_at_setpoint_is_gravity(arm, rng):
    q = rng.uniform(-2, 2, 7)
    g = gravity_torque(arm, q)
    tau = pd_gravity_control(q, np.zeros(7), q, np.zeros(7), PdGains.defaults(),
                             lambda x: gravity_torque(arm, x))
    np.testing.assert_array_equal(tau, g)


def test_pd_position_and_velocity_terms(arm, rng):
    q = rng.uniform(-1, 1, 7)
    g = gravity_torque(arm, q)
    gm = lambda x: gravity_torque(arm, x)
    q_d = q.copy()
    q_d[0] -= 1.0
    tau = pd_gravity_control(q, np.zeros(7), q_d, np.zeros(7), PdGains.defaults(), gm)
    assert tau[0] == pytest.approx(-150 + g[0], abs=1e-12)
    edot = 0.3
    qd = np.zeros(7)
    qd[4] = edot
    tau = pd_gravity_control(q, qd, q, np.zeros(7), PdGains.defaults(), gm)
    assert tau[4] == pytest.approx(-20 * edot + g[4], abs=1e-12)


def test_pd_gains_must_be_positive():
    with pytest.raises(ValueError):
        PdGains(np.ones(7), np.r_[np.ones(6), 0.0])


# --- integration ------------------------------------------------------------


def test_gravity_torque_holds_state(arm, rng):
    q = rng.uniform(-1.5, 1.5, 7)
    sim = SimState(q, np.zeros(7))
    g = gravity_torque(arm, q)
    for _ in range(100):
        sim = step(arm, sim, g, None, 0.01)
    np.testing.assert_allclose(sim.q, q, atol=1e-9)
    np.testing.assert_allclose(sim.qd, 0.0, atol=1e-9)
    assert sim.t == pytest.approx(1.0)


def _pd_run(arm, q0, target, dt):
    gains = PdGains.defaults()
    gm = lambda x: gravity_torque(arm, x)
    sim = SimState(q0, np.zeros(7))
    servo = lambda q, qd, t: pd_gravity_control(q, qd, target, np.zeros(7), gains, gm)
    for _ in range(int(round(1.0 / dt))):
        sim = step(arm, sim, servo, WAVE, dt)
    return sim.q


def test_first_order_convergence(arm):
    q0 = np.array([0.0, 0.6, 0.0, 1.6, 0.0, -1.1, 0.0])
    target = q0 + 0.2
    qs = [_pd_run(arm, q0, target, dt) for dt in (1e-2, 5e-3, 2.5e-3)]
    d1 = np.linalg.norm(qs[0] - qs[1])
    d2 = np.linalg.norm(qs[1] - qs[2])
    assert 1.6 < d1 / d2 < 2.5


def test_energy_is_nearly_conserved_without_torque(arm, rng):
    q0 = rng.uniform(-1, 1, 7)
    qd0 = rng.uniform(-0.5, 0.5, 7)
    zero_g = np.zeros(3)

    def energy(sim):
        return 0.5 * sim.qd @ mass_matrix(arm, sim.q) @ sim.qd

    sim = SimState(q0, qd0)
    e0 = energy(sim)
    for _ in range(100):
        sim = step(arm, sim, np.zeros(7), None, 0.01, g=zero_g)
    assert abs(energy(sim) - e0) < 1e-2 * e0


def test_step_is_bitwise_deterministic(arm, rng):
    q0 = rng.uniform(-1, 1, 7)
    a = _pd_run(arm, q0, q0 + 0.1, 1e-2)
    b = _pd_run(arm, q0, q0 + 0.1, 1e-2)
    assert a.tobytes() == b.tobytes()


def test_divergence_is_signalled(arm):
    sim = SimState(np.zeros(7), np.zeros(7))
    with pytest.raises(SimulationDiverged) as info:
        for _ in range(100):
            sim = step(arm, sim, np.full(7, 5e4), None, 0.01)
    assert info.value.t is not None


def test_state_must_be_finite():
    with pytest.raises(ValueError):
        SimState(np.r_[np.zeros(6), np.nan], np.zeros(7))
