import numpy as np
import pytest
from hypothesis import given, strategies as st

from chokepoint.activity import GRAVITY, AccelVarianceRule, Reason, SensorSnapshot, classify_activity
from chokepoint.simulator import ActivityModel

FLAT = tuple((0.0, 0.0, GRAVITY) for _ in range(30))
BUMPY = tuple((0.0, 0.0, GRAVITY + (1.5 if k % 2 else -1.5)) for k in range(30))

vec = st.tuples(st.floats(-20, 20), st.floats(-20, 20), st.floats(-20, 20))
snapshots = st.builds(SensorSnapshot, st.booleans(), st.integers(0, 20), st.lists(vec, max_size=40).map(tuple))


def test_known_wifi_dominates():
    v = classify_activity(SensorSnapshot(True, 10, BUMPY))
    assert (v.driving, v.reason) == (False, Reason.KNOWN_WIFI)


def test_tower_handoffs_mean_driving():
    v = classify_activity(SensorSnapshot(False, 4))
    assert (v.driving, v.reason) == (True, Reason.GSM_HANDOFF)


def test_three_towers_is_not_more_than_three():
    assert classify_activity(SensorSnapshot(False, 3, FLAT)).reason is Reason.ACCEL_IDLE


def test_still_device():
    v = classify_activity(SensorSnapshot(False, 1, FLAT))
    assert (v.driving, v.reason) == (False, Reason.ACCEL_IDLE)


def test_vibration_means_driving():
    v = classify_activity(SensorSnapshot(False, 1, BUMPY))
    assert (v.driving, v.reason) == (True, Reason.ACCEL_DRIVING)


def test_sensor_off():
    v = classify_activity(SensorSnapshot(False, 0, ()))
    assert (v.driving, v.reason) == (False, Reason.NO_EVIDENCE)


def test_free_fall_is_not_driving():
    shaky = tuple((0.0, 0.0, 1.5 if k % 2 else -1.5) for k in range(30))
    assert not AccelVarianceRule()(shaky)


def test_negative_tower_count():
    with pytest.raises(ValueError):
        SensorSnapshot(False, -1)


def test_cheaper_checks_short_circuit():
    def must_not_run(samples):
        raise AssertionError("accelerometer consulted")

    assert classify_activity(SensorSnapshot(True, 0, BUMPY), must_not_run).reason is Reason.KNOWN_WIFI
    assert classify_activity(SensorSnapshot(False, 5, BUMPY), must_not_run).reason is Reason.GSM_HANDOFF


def test_accelerometer_stage_is_pluggable():
    always = lambda samples: True
    assert classify_activity(SensorSnapshot(False, 0, FLAT), always).driving


@given(snapshots)
def test_known_wifi_forces_not_driving(snap):
    with_wifi = SensorSnapshot(True, snap.gsm_towers_in_window, snap.accel_samples)
    assert not classify_activity(with_wifi).driving


@given(snapshots)
def test_deterministic(snap):
    copy = SensorSnapshot(snap.known_wifi_visible, snap.gsm_towers_in_window, tuple(snap.accel_samples))
    assert classify_activity(snap) == classify_activity(copy)


@given(snapshots)
def test_reason_consistent_with_verdict(snap):
    v = classify_activity(snap)
    if v.reason is Reason.KNOWN_WIFI:
        assert not v.driving
    if v.reason is Reason.GSM_HANDOFF:
        assert v.driving


def test_synthetic_sensors_have_measurable_error_rates():
    model = ActivityModel()
    rng = np.random.default_rng(0)
    rule = AccelVarianceRule(var_min=model.accel_var_min)
    driving_hits = sum(classify_activity(model.snapshot(rng, True), rule).driving for _ in range(500))
    idle_hits = sum(classify_activity(model.snapshot(rng, False), rule).driving for _ in range(500))
    assert driving_hits / 500 > 0.95
    assert idle_hits / 500 < 0.05
