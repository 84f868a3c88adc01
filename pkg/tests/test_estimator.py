import numpy as np
import pytest

from floatarm.estimator import (EstimatorGains, EstimatorState, correction, lyapunov_value,
                                regressor, simulate_surrogate, update)

H = EstimatorGains()


def test_regressor():
    np.testing.assert_array_equal(regressor(0.0, 0.0), [1, 0, 0])
    np.testing.assert_array_equal(regressor(0.1, -0.2), [1, 0.1, -0.2])
    d = regressor([0.1, 0.2], [0.3, -0.4])
    np.testing.assert_array_equal(d, [[1, 0.1, 0.3], [1, 0.2, -0.4]])
    # linear apart from the constant entry
    a, b = regressor(0.3, 0.5), regressor(0.6, 1.0)
    np.testing.assert_allclose(b[1:], 2 * a[1:])
    assert a[0] == b[0] == 1.0


def test_zero_error_keeps_everything_zero():
    st = EstimatorState.zeros()
    for _ in range(100):
        st = update(st, np.zeros(7), np.zeros(7), H, 0.01)
    assert np.all(st.accumulator == 0.0)
    assert np.all(correction(st, np.zeros(7), np.zeros(7), H) == 0.0)


def test_single_rectangle_step():
    e = np.full(7, 0.1)
    st = update(EstimatorState.zeros(), e, np.zeros(7), H, 0.01)
    np.testing.assert_allclose(st.accumulator, np.tile([0.001, 0.0001, 0.0], (7, 1)), rtol=1e-12)


def test_two_steps_are_twice_one(rng):
    e, ed = rng.normal(size=7), rng.normal(size=7)
    one = update(EstimatorState.zeros(), e, ed, H, 0.01)
    two = update(one, e, ed, H, 0.01)
    np.testing.assert_allclose(two.accumulator, 2 * one.accumulator, rtol=1e-15)


def test_correction_of_constant_accumulator_component():
    a = 0.37
    acc = np.zeros((7, 3))
    acc[:, 0] = a
    st = EstimatorState(acc)
    np.testing.assert_allclose(correction(st, np.zeros(7), np.zeros(7), H), -a)


def test_correction_scales_inversely_with_h(rng):
    st = EstimatorState(rng.normal(size=(7, 3)))
    e, ed = rng.normal(size=7), rng.normal(size=7)
    base = correction(st, e, ed, H)
    np.testing.assert_allclose(correction(st, e, ed, H.scaled(4.0)), base / 4.0, rtol=1e-12)


def test_saturation_clamps_and_counts():
    st = EstimatorState.zeros(saturation=0.05)
    e = np.full(7, 1.0)
    for _ in range(10):
        st = update(st, e, np.zeros(7), H, 0.01)
    assert np.all(np.abs(st.accumulator) <= 0.05 + 1e-15)
    assert st.clamps > 0
    # integration resumes in the unsaturating direction
    before = st.accumulator.copy()
    st = update(st, -e, np.zeros(7), H, 0.01)
    assert np.all(st.accumulator[:, 0] < before[:, 0])


def test_gains_and_dt_validation():
    with pytest.raises(ValueError):
        EstimatorGains([1.0, 0.0, 10.0])
    with pytest.raises(ValueError):
        update(EstimatorState.zeros(), np.zeros(7), np.zeros(7), H, 0.0)


# --- single-joint surrogate -----------------------------------------------------


def test_surrogate_follows_the_public_update_law():
    lam = np.array([2.0, 5.0, 1.0])
    run = simulate_surrogate(150.0, 50.0, lam, H, 0.05, dt=1e-3, e0=0.05)
    st = EstimatorState.zeros(1, saturation=np.inf)
    for k in range(len(run.t)):
        np.testing.assert_allclose(correction(st, [run.e[k]], [run.ed[k]], H)[0], run.qtilde[k],
                                   rtol=1e-12, atol=1e-15)
        assert run.lyapunov[k] == pytest.approx(
            lyapunov_value(run.e[k], st.accumulator[0], lam, 150.0, 50.0, H), rel=1e-12)
        if k + 1 < len(run.t):
            st = update(st, [run.e[k]], [run.ed[k]], H, 1e-3)
    np.testing.assert_allclose(st.accumulator[0], run.accumulator, rtol=1e-12)


@pytest.mark.parametrize("kp,kd,lam,e0", [(150.0, 50.0, [2.0, 5.0, 1.0], 0.05),
                                          (70.0, 20.0, [-3.0, 10.0, 0.5], 0.1)])
def test_lyapunov_function_is_non_increasing(kp, kd, lam, e0):
    run = simulate_surrogate(kp, kd, np.array(lam), H, 1.0, dt=1e-5, e0=e0)
    V = run.lyapunov[run.t >= 0.1]
    assert np.max(np.diff(V)) <= 1e-8
    assert V[-1] < run.lyapunov[0]


@pytest.mark.parametrize("kp,kd", [(150.0, 50.0), (70.0, 20.0)])
def test_bounded_disturbance_leaves_error_in_residual_set(kp, kd):
    mu = 0.5
    eps = lambda t: mu * np.sin(2 * np.pi * t / 1.67)
    run = simulate_surrogate(kp, kd, np.array([2.0, 5.0, 1.0]), H, 20.0, dt=1e-4, eps=eps)
    tail = np.abs(run.e[run.t >= 10.0])
    assert tail.max() <= 1.1 * mu / kp


def test_surrogate_without_error_has_no_correction():
    run = simulate_surrogate(150.0, 50.0, np.zeros(3), H, 0.5, dt=1e-3)
    assert np.all(run.e == 0.0)
    assert np.all(run.qtilde == 0.0)


@pytest.mark.slow
def test_estimator_reduces_joint_error_under_base_motion(runs):
    with_est = runs.get("hold.toml", "mpc+estimator")
    without = runs.get("hold.toml", "mpc")
    a = with_est.diagnostics["mean_joint_error_rad"]
    b = without.diagnostics["mean_joint_error_rad"]
    print(f"mean |q - q_bar_d| over the last 80%: estimator {a:.6f} rad, without {b:.6f} rad")
    assert a < b
