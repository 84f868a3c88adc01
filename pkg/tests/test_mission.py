import numpy as np
import pytest

from floatarm.kalman import TargetState
from floatarm.kinematics import Pose
from floatarm.mission import (CATCH_ERROR_M, Event, MissionConfig, MissionProtocolError,
                              MissionState, Phase, ScriptedEvent, ScriptedEvents, TrackingSpace,
                              block_position, catch_condition, in_tracking_space, mission_step,
                              phase_rank, restore_intervals)

DT = 0.01
SPACE = TrackingSpace.flat(0.7, 0.2, 0.8)


def config(**kw):
    base = dict(space=SPACE, tether_length=0.6, track_height=0.6,
                restore_durations=(4.3, 5.1, 5.8), home=Pose([0.3, 0.0, 0.5]),
                waypoints=((1.0, Pose([0.2, -0.2, 0.6])), (1.0, Pose([0.3, 0.0, 0.6]))),
                place_path=((1.0, Pose([0.3, 0.2, 0.5])),))
    base.update(kw)
    return MissionConfig(**base)


def script(*outcomes, dock_after=1.0, lock_after=0.5):
    evs = [ScriptedEvent(e, attempt=i + 1) for i, e in enumerate(outcomes)]
    evs += [ScriptedEvent("docking-success", after=dock_after),
            ScriptedEvent("platform-locked", after=lock_after)]
    return ScriptedEvents(tuple(evs))


def drive(events, cfg, uav=lambda t: np.array([0.35, 0.05, 1.2]), until=120.0):
    """Closed loop with a perfect arm: the flange sits on the previous directive's target."""
    st = MissionState()
    ee = cfg.home
    log, directives = [], []
    err_t, err_v = [], []
    for k in range(int(round(until / DT))):
        t = k * DT
        est = TargetState.initial(uav(t), 0.01)
        prev = st.label
        st, d = mission_step(st, est, ee, events, t, cfg)
        if not log or st.label != prev:
            log.append((t, st.label, st.attempt))
        block = block_position(est.position, cfg.tether_length)
        err_t.append(t)
        err_v.append(float(np.hypot(*(ee.p[:2] - block[:2]))))
        directives.append((t, d.kind, catch_condition(err_t, err_v, t, DT)))
        if d.target is not None:
            ee = d.target
        if st.phase is Phase.DONE:
            break
    return st, log, directives


# --- tracking space and catch gate ------------------------------------------------


def test_tracking_space_membership():
    assert in_tracking_space((0, 0, 0.5), SPACE)
    assert not in_tracking_space((0.71, 0, 0.5), SPACE)
    assert in_tracking_space((0.7, 0, 0.5), SPACE)
    assert in_tracking_space((0.7 * np.cos(1.0), 0.7 * np.sin(1.0) - 1e-12, 0.5), SPACE)
    assert not in_tracking_space((0, 0, 0.9), SPACE)
    assert in_tracking_space((0, 0, 0.2), SPACE)


def test_tracking_space_needs_ordered_boundaries():
    with pytest.raises(ValueError):
        TrackingSpace.flat(0.7, 0.8, 0.2)


def ticks(seconds, start=0.0):
    return list(start + DT * np.arange(int(round(seconds / DT)) + 1))


def test_catch_condition_holds_after_one_clean_second():
    t = ticks(1.2)
    assert catch_condition(t, [0.14] * len(t), t[-1])


def test_catch_condition_fails_above_threshold():
    t = ticks(1.2)
    assert not catch_condition(t, [0.16] * len(t), t[-1])


def test_catch_condition_needs_a_full_clean_window():
    t = ticks(1.5)
    spike = int(round(0.6 / DT))
    err = [0.10] * len(t)
    err[spike] = 0.5
    # the last 0.9 s are clean, but the window still contains the spike
    assert not catch_condition(t, err, t[-1])
    assert catch_condition(t + ticks(0.2, t[-1] + DT), err + [0.10] * 21, t[-1] + 0.21)


def test_catch_condition_needs_every_tick():
    t = ticks(1.2)
    del t[50]
    assert not catch_condition(t, [0.1] * len(t), t[-1])


def test_threshold_is_strict():
    t = ticks(1.0)
    assert not catch_condition(t, [CATCH_ERROR_M] * len(t), t[-1])


# --- block model -----------------------------------------------------------------------


def test_block_hangs_below_the_uav():
    np.testing.assert_allclose(block_position([0, 0, 1.5], 0.6), [0, 0, 0.9])
    np.testing.assert_allclose(block_position([0.3, 0.1, 1.5], 0.0), [0.3, 0.1, 1.5])


def test_vertical_tether_versus_swinging_pendulum():
    L, theta_max = 0.6, np.radians(12)
    uav = np.array([0.3, 0.1, 1.5])
    worst_planar = worst_3d = 0.0
    for t in np.linspace(0, 5, 501):
        th = theta_max * np.sin(2 * np.pi * t / np.sqrt(L / 9.81) / (2 * np.pi))
        swing = uav + L * np.array([np.sin(th), 0.0, -np.cos(th)])
        d = swing - block_position(uav, L)
        worst_planar = max(worst_planar, np.hypot(d[0], d[1]))
        worst_3d = max(worst_3d, np.linalg.norm(d))
    # the planar error, which is what the catch gate sees, stays within L sin(theta_max);
    # the full offset is the chord 2 L sin(theta / 2)
    assert worst_planar <= L * np.sin(theta_max) + 1e-12
    assert worst_3d <= 2 * L * np.sin(theta_max / 2) + 1e-12


# --- state machine ------------------------------------------------------------------------


def test_happy_path_visits_every_phase_in_order():
    st, log, _ = drive(script("catch-success"), config())
    phases = [label.split(":")[0] for _, label, _ in log]
    order = [Phase.TRACK_CATCH.value, Phase.TETHER.value, Phase.CALIBRATE.value,
             Phase.PLACE.value, Phase.DONE.value]
    assert [p for i, p in enumerate(phases) if i == 0 or p != phases[i - 1]] == order
    times = [t for t, _, _ in log]
    assert times == sorted(times)
    assert st.phase is Phase.DONE and st.attempt == 1


def test_three_failures_then_success():
    cfg = config()
    st, log, _ = drive(script("catch-fail", "catch-fail", "catch-fail", "catch-success"), cfg)
    assert st.phase is Phase.DONE
    assert st.attempt == 4 and st.failures == 3
    intervals = restore_intervals(log)
    assert len(intervals) == 3
    for (a, b), want in zip(intervals, cfg.restore_durations):
        assert b - a == pytest.approx(want, abs=DT + 1e-9)
        assert 4.0 <= b - a <= 6.0 + DT
    assert log[-1][0] < 120.0


def test_descend_only_while_catch_condition_holds():
    wobble = lambda t: np.array([0.35 + 0.2 * np.sin(1.3 * t), 0.05 + 0.15 * np.sin(0.7 * t), 1.2])
    _, _, directives = drive(script("catch-fail", "catch-fail", "catch-success"), config(),
                             uav=wobble, until=60.0)
    descents = [ok for _, kind, ok in directives if kind == "descend-to-catch"]
    assert descents and all(descents)


def test_target_outside_tracking_space_means_hold():
    cfg = config()
    far = lambda t: np.array([2.0, 0.0, 1.2])
    st, _, directives = drive(script("catch-success"), cfg, uav=far, until=3.0)
    assert {kind for _, kind, _ in directives} == {"hold"}
    assert st.phase is Phase.TRACK_CATCH and st.attempt == 0


def test_phases_never_regress():
    _, log, _ = drive(script("catch-fail", "catch-success"), config())
    ranks = [phase_rank(label.split(":")[0]) for _, label, _ in log]
    assert ranks == sorted(ranks)


def test_identical_scripts_give_identical_timelines():
    ev = script("catch-fail", "catch-success")
    assert drive(ev, config())[1] == drive(ev, config())[1]


def test_event_in_wrong_phase_is_a_protocol_error():
    ev = ScriptedEvents((ScriptedEvent("docking-success", t=0.5),))
    with pytest.raises(MissionProtocolError):
        drive(ev, config(), until=1.0)


def test_block_lock_follows_attraction_after_lock_time():
    st, log, _ = drive(script("catch-success"), config())
    t_catch = next(t for t, label, _ in log if label.endswith("catching"))
    t_tether = next(t for t, label, _ in log if label == Phase.TETHER.value)
    # one second of catching, then the 0.8 s lock
    assert t_tether - t_catch == pytest.approx(1.0 + 0.8, abs=1.5 * DT)


def test_scripted_event_validation():
    with pytest.raises(ValueError):
        ScriptedEvent("catch-fail")
    with pytest.raises(ValueError):
        ScriptedEvent("catch-fail", t=1.0, attempt=1)
    with pytest.raises(ValueError):
        ScriptedEvent("catch-fail", attempt=0)
    with pytest.raises(ValueError):
        ScriptedEvent("docking-success", attempt=1)
    with pytest.raises(ValueError):
        ScriptedEvent("catch-success", after=1.0)
    with pytest.raises(ValueError):
        ScriptedEvents((ScriptedEvent("docking-success", t=2.0),
                        ScriptedEvent("platform-locked", t=1.0)))
    assert ScriptedEvent("docking-success", t=1.0).event is Event.DOCKING_SUCCESS


def test_restore_durations_must_lie_in_range():
    with pytest.raises(ValueError):
        config(restore_durations=(3.5,))
    with pytest.raises(ValueError):
        config(restore_durations=(6.5,))


def test_time_must_not_run_backwards():
    cfg = config()
    st, _ = mission_step(MissionState(), None, cfg.home, ScriptedEvents(), 1.0, cfg)
    with pytest.raises(ValueError):
        mission_step(st, None, cfg.home, ScriptedEvents(), 0.5, cfg)
