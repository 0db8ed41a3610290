import json

import numpy as np
import pytest

from evslip.errors import EmptySample
from evslip.events import EventBatch
from evslip.replay import (
    WindowSeries,
    detect_log,
    detect_series,
    flags_to_events,
    label_log,
    sample_thresholds,
    window_series,
)
from evslip.sim.closed_loop import run_closed_loop
from evslip.slip import Approach, DetectorConfig, NoiseThresholds, SlipKind


@pytest.fixture(scope="module", params=[("load_drop_heavy", 0), ("flicker_load", 3)])
def sim(request):
    name, seed = request.param
    return run_closed_loop(name, seed=seed)


def test_replay_reproduces_online_labels(sim):
    labels, _ = label_log(sim.events)
    logged = sim.labels >= 0
    np.testing.assert_array_equal(labels[logged], sim.labels[logged])


def test_replay_reproduces_online_detections(sim):
    rep = sim.report
    tl = rep.timeline
    det = detect_log(sim.events, rep.thresholds, DetectorConfig(rep.dt_us, rep.s_bias), t_start=tl["monitor_start_us"],
                     t_end=tl["end_us"])
    for name in ("baseline", "feature"):
        assert [e.to_dict() for e in det.slip_events[name]] == [e.to_dict() for e in rep.slip_events[name]]


def test_replay_reproduces_sampled_thresholds(sim):
    rep = sim.report
    tl = sim.report.timeline
    labels, _ = label_log(sim.events)
    series = window_series(sim.events.t, labels, rep.dt_us, tl["sample_start_us"], tl["grasp_us"])
    assert sample_thresholds(series) == rep.thresholds


def test_window_series_covers_every_window():
    t = np.array([10, 20, 2600])
    s = window_series(t, np.array([2, 1, 0]), 500, 0)
    assert len(s) == 6
    assert s.raw.tolist() == [2, 0, 0, 0, 0, 1]
    assert s.corner.tolist()[0] == 1 and s.edge.tolist()[0] == 1
    assert [w.t_start for w in s] == [0, 500, 1000, 1500, 2000, 2500]


def test_window_series_with_offset_start():
    s = window_series(np.array([10, 700, 1200]), np.zeros(3, np.int8), 500, 500, 1500)
    assert s.first_window == 1 and s.raw.tolist() == [1, 1]
    assert s.window(0).window_index == 1


def test_empty_sampling_span_raises():
    s = window_series(np.array([], np.int64), np.array([], np.int8), 500, 0)
    with pytest.raises(EmptySample):
        sample_thresholds(s)


def test_flags_to_events_marks_heads():
    s = WindowSeries(0, 500, np.full(600, 50), np.full(600, 9), np.full(600, 9))
    flags = np.zeros(600, bool)
    flags[[5, 6, 7, 300]] = True
    evs = flags_to_events(flags, s, Approach.FEATURE, DetectorConfig())
    assert [e.kind for e in evs] == [SlipKind.INCIPIENT, SlipKind.GROSS, SlipKind.GROSS, SlipKind.INCIPIENT]
    assert evs[0].t_detect == 3000 and evs[0].s_e == 9 and evs[0].s_r is None


def test_detect_series_report_json():
    s = WindowSeries(0, 500, np.array([1, 40, 2]), np.array([0, 10, 0]), np.array([0, 10, 1]))
    rep = detect_series(s, NoiseThresholds(5, 2, 2))
    d = json.loads(rep.to_json(verbose=True))
    assert d["episodes"] == {"baseline": 1, "feature": 1}
    assert d["windows"]["c_raw"] == [1, 40, 2]
    assert "windows" not in rep.to_dict()
    assert rep.series.to_csv(rep.flags).splitlines()[2] == "1,500,40,10,10,1,1"


def test_unknown_approach_rejected():
    s = WindowSeries(0, 500, np.zeros(1, int), np.zeros(1, int), np.zeros(1, int))
    with pytest.raises(ValueError):
        detect_series(s, NoiseThresholds(0, 0, 0), approaches=("magic",))


def test_detect_log_on_empty_log():
    rep = detect_log(EventBatch.empty(), NoiseThresholds(0, 0, 0))
    assert rep.n_events == 0 and len(rep.series) == 0
    assert rep.slip_events == {"baseline": [], "feature": []}
