import numpy as np
import pytest
from scipy.stats import chi2

from floatarm.kalman import (GATE_99_9, FilterModel, TargetState, predict, read_measurements,
                             step, update)

MODEL = FilterModel.constant_velocity()


def assert_spd(P, tol=1e-12):
    assert np.max(np.abs(P - P.T)) <= tol
    assert np.linalg.eigvalsh(P)[0] > 0.0


def test_model_blocks():
    dt = 0.01
    np.testing.assert_array_equal(MODEL.D[:3, 3:], dt * np.eye(3))
    np.testing.assert_array_equal(MODEL.D[3:, :3], 0.0)
    np.testing.assert_array_equal(MODEL.F, np.hstack((np.eye(3), np.zeros((3, 3)))))
    np.testing.assert_allclose(MODEL.Q_M, 0.02 ** 2 * np.eye(3))
    assert GATE_99_9 == pytest.approx(chi2.ppf(0.999, 3))


def test_predict_stationary_target():
    st = TargetState([1, 2, 3, 0, 0, 0], np.eye(6) * 0.01)
    nxt = predict(st, MODEL)
    np.testing.assert_array_equal(nxt.position, [1, 2, 3])
    assert np.all(np.diag(nxt.cov) > np.diag(st.cov))


def test_predict_advances_position_by_velocity():
    st = TargetState([0, 0, 0, 0, 0, 0.5], np.eye(6))
    assert predict(st, MODEL).position[2] == pytest.approx(0.005, abs=1e-15)


def test_covariance_stays_spd_over_many_predicts():
    st = TargetState.initial([0, 0, 0])
    for _ in range(1000):
        st = predict(st, MODEL)
    assert_spd(st.cov, tol=1e-10 * np.max(np.abs(st.cov)))


def test_zero_innovation_leaves_mean_unchanged():
    st = TargetState([1, 2, 3, 0.1, 0, 0], np.eye(6) * 1e-8)
    new = update(st, [1, 2, 3], MODEL)
    np.testing.assert_allclose(new.mean, st.mean, atol=1e-15)
    assert not new.rejected


def test_repeated_fixes_converge_to_the_point(rng):
    p = np.array([0.4, -0.2, 1.1])
    st = TargetState.initial(rng.normal(size=3), pos_std=1.0)
    for _ in range(200):
        st = step(st, p, MODEL)
    np.testing.assert_allclose(st.position, p, atol=1e-3)


def test_outlier_is_gated_out(rng):
    st = TargetState.initial([0, 0, 1], pos_std=0.02)
    for _ in range(200):
        st = step(st, [0, 0, 1] + rng.normal(scale=0.02, size=3), MODEL)
    out = step(st, [10, 0, 1], MODEL)
    assert out.rejected
    np.testing.assert_array_equal(out.mean, predict(st, MODEL).mean)


def test_joseph_update_keeps_symmetry(rng):
    st = TargetState.initial([0, 0, 0])
    for _ in range(500):
        st = step(st, rng.normal(scale=0.02, size=3), MODEL)
        assert np.max(np.abs(st.cov - st.cov.T)) <= 1e-12
        assert np.linalg.eigvalsh(st.cov)[0] > 0.0


def test_noise_free_filter_reproduces_the_trajectory():
    dt = 0.01
    model = FilterModel(MODEL.D, MODEL.F, np.zeros((6, 6)), np.zeros((3, 3)), dt)
    x0 = np.array([0.1, 0.2, 0.3, 0.5, -0.25, 0.1])
    st = TargetState(x0, np.eye(6) * 1e-4)
    for k in range(1, 1001):
        st = step(st, x0[:3] + x0[3:] * k * dt, model)
        np.testing.assert_allclose(st.position, x0[:3] + x0[3:] * k * dt, atol=1e-9)
    np.testing.assert_allclose(st.velocity, x0[3:], atol=1e-9)


def synthetic_track(rng, seconds=10.0, dt=0.01, sigma=0.02):
    n = int(round(seconds / dt))
    t = np.arange(1, n + 1) * dt
    p0 = np.array([0.5, -0.3, 1.5])
    v = np.array([0.05, 0.08, -0.02])
    truth = p0 + t[:, None] * v
    return truth, truth + rng.normal(scale=sigma, size=truth.shape), p0


def test_filter_halves_the_measurement_error():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        truth, z, p0 = synthetic_track(rng)
        st = TargetState.initial(z[0], pos_std=0.02)
        est = [st.position]
        for zi in z[1:]:
            st = step(st, zi, MODEL)
            est.append(st.position)
        est = np.array(est)
        raw = np.sqrt(np.mean(np.sum((z - truth) ** 2, axis=1)))
        filt = np.sqrt(np.mean(np.sum((est - truth) ** 2, axis=1)))
        assert filt < 0.5 * raw


def test_missing_measurement_skips_the_update():
    st = TargetState.initial([0, 0, 0])
    np.testing.assert_array_equal(step(st, None, MODEL).cov, predict(st, MODEL).cov)


def test_dt_scaled_measurement_variant():
    m = FilterModel.constant_velocity(dt_scaled_measurement=True)
    np.testing.assert_allclose(m.Q_M, 0.02 ** 2 * 0.01 * np.eye(3))


def test_state_validation():
    with pytest.raises(ValueError):
        TargetState(np.zeros(6), -np.eye(6))
    with pytest.raises(ValueError):
        TargetState(np.zeros(6), np.eye(6) + np.triu(np.ones((6, 6)), 1))
    with pytest.raises(ValueError):
        update(TargetState.initial([0, 0, 0]), [np.nan, 0, 0], MODEL)


def test_read_measurements(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("t,x,y,z\n0.0,1,2,3\n0.01,1.1,2,3\n")
    t, xyz = read_measurements(p)
    np.testing.assert_array_equal(t, [0.0, 0.01])
    np.testing.assert_array_equal(xyz[1], [1.1, 2, 3])
    p.write_text("t,x,y,z\n0.02,1,2,3\n0.01,1.1,2,3\n")
    with pytest.raises(ValueError):
        read_measurements(p)
