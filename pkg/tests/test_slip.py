import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evslip.errors import ConfigError, EmptySample, StageViolation
from evslip.events import WindowCounts
from evslip.harris import FeatureClass
from evslip.replay import label_log, sample_thresholds, window_series
from evslip.sim.closed_loop import run_closed_loop
from evslip.sim.emulator import NoiseModel, noise_events
from evslip.slip import (
    Approach,
    DetectorConfig,
    NoiseThresholds,
    SlipEvent,
    SlipKind,
    SlipMonitor,
    Stage,
    baseline_flags,
    detect_baseline,
    detect_feature,
    extract_incipient,
    feature_flags,
    sample_noise_thresholds,
    stage_controller,
)

from oracles import recount_windows


def _w(k, raw=0, edge=0, corner=0, dt=500):
    return WindowCounts(k, k * dt, raw, edge, corner)


# ---------------------------------------------------------------- sampling


def test_thresholds_take_the_maximum():
    th = sample_noise_thresholds([_w(0, 3, 1, 0), _w(1, 5, 0, 2), _w(2, 2, 2, 1)])
    assert th == NoiseThresholds(5, 2, 2)


def test_all_zero_windows_give_zero_thresholds():
    assert sample_noise_thresholds([_w(i) for i in range(4)]) == NoiseThresholds(0, 0, 0)


def test_empty_sample_raises():
    with pytest.raises(EmptySample):
        sample_noise_thresholds([])


def test_noise_thresholds_match_recount():
    rng = np.random.default_rng(11)
    batch = noise_events(NoiseModel(base_rate=20_000.0), 0, 1_000_000, rng)
    labels, _ = label_log(batch)
    series = window_series(batch.t, labels, 500, 0, 1_000_000)
    assert len(series) == 2000
    th = sample_thresholds(series)
    raw, edge, corner = recount_windows(batch.t, labels, 500, 0, 1_000_000)
    assert th == NoiseThresholds(max(raw), max(edge), max(corner))
    assert sum(raw) == len(batch)


def test_thresholds_roundtrip_dict():
    th = NoiseThresholds(7, 3, 1)
    assert NoiseThresholds.from_dict(th.to_dict()) == th


# ---------------------------------------------------------------- detectors


def test_baseline_triggers_at_biased_threshold():
    th = NoiseThresholds(100, 0, 0)
    cfg = DetectorConfig(s_bias=0.10)
    assert detect_baseline(_w(0, 110), th, cfg) == 110
    assert detect_baseline(_w(0, 109), th, cfg) is None
    assert detect_baseline(_w(0, 0), th, cfg) is None


def test_feature_requires_both_counts():
    th = NoiseThresholds(100, 10, 10)
    assert detect_feature(_w(0, 200, 50, 5), th) is None
    assert detect_feature(_w(0, 200, 5, 50), th) is None
    assert detect_feature(_w(0, 200, 50, 40), th) == (50, 40)


def test_zero_thresholds_need_one_event_each():
    th = NoiseThresholds(0, 0, 0)
    assert detect_feature(_w(0, 2, 1, 1), th) == (1, 1)
    assert detect_feature(_w(0, 5, 5, 0), th) is None
    assert detect_baseline(_w(0, 1), th) == 1
    assert detect_baseline(_w(0, 0), th) is None


def test_dead_zone_between_threshold_and_bias():
    th = NoiseThresholds(100, 100, 100)
    for c in range(100, 110):
        assert detect_baseline(_w(0, c), th) is None
        assert detect_feature(_w(0, c, c, c), th) is None


def test_config_validation():
    for kw in ({"dt_us": 0}, {"s_bias": -0.1}, {"episode_gap_us": -1}, {"sampling_us": 0}):
        with pytest.raises(ConfigError):
            DetectorConfig(**kw)


counts = st.integers(0, 400)
ths = st.builds(NoiseThresholds, counts, counts, counts)


@given(raw=counts, edge=counts, corner=counts, th=ths, shrink=st.tuples(counts, counts, counts),
       bias=st.floats(0.0, 1.0))
def test_detectors_are_monotone_in_thresholds(raw, edge, corner, th, shrink, bias):
    smaller = NoiseThresholds(*(max(0, a - b) for a, b in zip((th.th_rmax, th.th_emax, th.th_cmax), shrink)))
    cfg = DetectorConfig(s_bias=bias)
    w = _w(0, raw, edge, corner)
    if detect_baseline(w, th, cfg) is not None:
        assert detect_baseline(w, smaller, cfg) == raw
    if detect_feature(w, th, cfg) is not None:
        assert detect_feature(w, smaller, cfg) == (edge, corner)


@given(th=ths, bias=st.floats(0.0, 1.0), data=st.data())
def test_no_detection_below_unbiased_thresholds(th, bias, data):
    raw = data.draw(st.integers(0, max(th.th_rmax - 1, 0)))
    edge = data.draw(st.integers(0, max(th.th_emax - 1, 0)))
    cfg = DetectorConfig(s_bias=bias)
    if th.th_rmax > 0:
        assert detect_baseline(_w(0, raw), th, cfg) is None
    if th.th_emax > 0:
        assert detect_feature(_w(0, raw, edge, 10**6), th, cfg) is None


@given(raw=st.lists(counts, min_size=1, max_size=50), th=ths, bias=st.floats(0.0, 1.0), seed=st.integers(0, 99))
def test_vector_flags_agree_with_scalar_detectors(raw, th, bias, seed):
    rng = np.random.default_rng(seed)
    raw = np.array(raw)
    edge = rng.integers(0, raw + 1)
    corner = rng.integers(0, raw - edge + 1)
    cfg = DetectorConfig(s_bias=bias)
    bf = baseline_flags(raw, th, bias)
    ff = feature_flags(edge, corner, th, bias)
    for i in range(len(raw)):
        w = _w(i, int(raw[i]), int(edge[i]), int(corner[i]))
        assert bf[i] == (detect_baseline(w, th, cfg) is not None)
        assert ff[i] == (detect_feature(w, th, cfg) is not None)


# ---------------------------------------------------------------- episodes


def _flag(k):
    return SlipEvent(k, SlipKind.GROSS, Approach.FEATURE, (k + 1) * 500, s_e=1, s_c=1)


def test_consecutive_flags_form_one_episode():
    eps = extract_incipient([_flag(10), _flag(11), _flag(12)])
    assert len(eps) == 1
    assert [e.kind for e in eps[0]] == [SlipKind.INCIPIENT, SlipKind.GROSS, SlipKind.GROSS]
    assert eps[0][0].window_index == 10


def test_long_gap_splits_episodes():
    eps = extract_incipient([_flag(10), _flag(310)])
    assert [ep[0].kind for ep in eps] == [SlipKind.INCIPIENT, SlipKind.INCIPIENT]


def test_gap_boundary():
    # 200 idle windows of 500 us is exactly the 100 ms gap
    assert len(extract_incipient([_flag(0), _flag(201)])) == 2
    assert len(extract_incipient([_flag(0), _flag(200)])) == 1


def test_no_flags_no_episodes():
    assert extract_incipient([]) == []


# ---------------------------------------------------------------- stage machine


def test_protocol_freezes_thresholds_at_grasp():
    m = SlipMonitor()
    for w in (_w(0, 3, 1, 1), _w(1, 5, 2, 0)):
        assert stage_controller(m, w) == []
    stage_controller(m, Stage.GRASPING, grip=20.0)
    assert m.thresholds == NoiseThresholds(5, 2, 1)
    stage_controller(m, _w(2, 500, 200, 200))  # grasping windows are not sampled
    assert m.thresholds == NoiseThresholds(5, 2, 1)
    stage_controller(m, Stage.MONITORING)
    out = stage_controller(m, _w(3, 50, 20, 20))
    assert {e.approach for e in out} == {Approach.BASELINE, Approach.FEATURE}
    assert all(e.kind is SlipKind.INCIPIENT for e in out)
    assert all(e.t_detect == 2000 for e in out)


def test_monitor_before_sampling_raises():
    with pytest.raises(StageViolation):
        stage_controller(SlipMonitor(), Stage.MONITORING)


def test_grasp_without_samples_raises():
    with pytest.raises(EmptySample):
        SlipMonitor().grasp(20.0)


def test_stages_never_go_back():
    m = SlipMonitor()
    m.set_thresholds(NoiseThresholds(1, 1, 1))
    m.start_monitoring()
    with pytest.raises(StageViolation):
        m.command(Stage.SAMPLING)
    with pytest.raises(StageViolation):
        m.set_thresholds(NoiseThresholds(1, 1, 1))


def test_grip_percent_range_checked():
    m = SlipMonitor()
    m.feed(_w(0))
    with pytest.raises(ConfigError):
        m.grasp(120.0)


def test_online_kinds_match_offline_extraction():
    rng = np.random.default_rng(4)
    m = SlipMonitor()
    m.set_thresholds(NoiseThresholds(5, 2, 2))
    m.start_monitoring()
    online = []
    for k in range(2000):
        hot = rng.random() < 0.02
        w = _w(k, 20 if hot else 1, 6 if hot else 0, 6 if hot else 0)
        online += [e for e in m.feed(w) if e.approach is Approach.FEATURE]
    offline = [e for ep in extract_incipient(online) for e in ep]
    assert [e.kind for e in offline] == [e.kind for e in online]


def test_load_drop_incipient_within_one_window_of_onset():
    rep = run_closed_loop("load_drop_heavy", seed=0).report
    onset = rep.slip_intervals[0].t_start // rep.dt_us
    heads = [e.window_index for e in rep.slip_events["feature"] if e.kind is SlipKind.INCIPIENT]
    assert any(abs(k - onset) <= 1 for k in heads)


def test_detection_is_deterministic():
    rng = np.random.default_rng(8)
    windows = [_w(k, *sorted(rng.integers(0, 30, 3).tolist(), reverse=True)) for k in range(500)]

    def run():
        m = SlipMonitor()
        for w in windows[:100]:
            m.feed(w)
        m.grasp(20.0)
        m.start_monitoring()
        return [e for w in windows[100:] for e in m.feed(w)]

    assert run() == run()


def test_feature_counts_never_exceed_raw():
    res = run_closed_loop("calm", seed=3)
    w = res.windows
    assert np.all(w["edge"] + w["corner"] <= w["raw"])
    assert not np.any(res.labels[res.labels >= 0] > FeatureClass.CORNER)
