import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evslip.errors import ConfigError, EmptyAggregate
from evslip.fuzzy import (
    DEFAULT_CORNER_RANGE,
    DEFAULT_EDGE_RANGE,
    ControllerState,
    FuzzyConfig,
    GaussianMF,
    TriangularMF,
    aggregate,
    calibrate_input_ranges,
    default_config,
    defuzzify_cog,
    equal_partition,
    fuzzify,
    grip_policy,
    infer,
    rule_strengths,
    suppress_step,
)

from oracles import cog_oracle, cog_oracle_vec

# COG of the fully fired VL set (mean 90, FWHM 20) truncated to [0, 100],
# from the 100,001-point Riemann oracle.
VL_FULL_COG = 88.07604481936838

CFG = default_config()
MEANS = [m.mean for m in CFG.force_mfs]
SIGMA = CFG.force_mfs[0].sigma


# ---------------------------------------------------------------- membership functions


def test_triangle_shape():
    t = TriangularMF(0.0, 5.0, 10.0)
    assert float(t(5.0)) == 1.0
    assert float(t(2.5)) == pytest.approx(0.5)
    assert float(t(-1.0)) == 0.0 and float(t(11.0)) == 0.0


def test_shoulder_triangles_peak_at_their_foot():
    s, m, l = equal_partition(0.0, 10.0)
    assert float(s(0.0)) == 1.0 and float(l(10.0)) == 1.0


def test_triangle_rejects_disorder():
    with pytest.raises(ConfigError):
        TriangularMF(2.0, 1.0, 3.0)


def test_gaussian_peak_and_sigma_check():
    assert float(GaussianMF(50.0, 8.0)(50.0)) == 1.0
    with pytest.raises(ConfigError):
        GaussianMF(50.0, 0.0)


@given(x=st.floats(-1e3, 1e3), lo=st.floats(-100, 100), span=st.floats(1e-3, 500))
def test_partition_degrees_in_unit_interval_and_sum_to_one(x, lo, span):
    mfs = equal_partition(lo, lo + span)
    mu = fuzzify(x, mfs)
    assert np.all((mu >= 0) & (mu <= 1))
    assert mu.sum() == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------- fuzzify


def test_fuzzify_at_small_peak():
    np.testing.assert_array_equal(fuzzify(DEFAULT_EDGE_RANGE[0], CFG.edge_mfs), [1.0, 0.0, 0.0])


def test_fuzzify_between_small_and_medium_peaks():
    lo, hi = DEFAULT_EDGE_RANGE
    x = lo + (hi - lo) / 4
    np.testing.assert_allclose(fuzzify(x, CFG.edge_mfs), [0.5, 0.5, 0.0])


def test_fuzzify_clamps_above_range():
    hi = DEFAULT_EDGE_RANGE[1]
    np.testing.assert_array_equal(fuzzify(hi + 500, CFG.edge_mfs), fuzzify(hi, CFG.edge_mfs))
    np.testing.assert_array_equal(fuzzify(-50, CFG.edge_mfs), fuzzify(DEFAULT_EDGE_RANGE[0], CFG.edge_mfs))


# ---------------------------------------------------------------- rules and aggregation


def test_single_small_rule_fires():
    d = rule_strengths([1, 0, 0], [1, 0, 0])
    expected = np.zeros((3, 3))
    expected[0, 0] = 1
    np.testing.assert_array_equal(d, expected)
    assert CFG.rules[0][0] == "VS"


def test_rule_strengths_use_min():
    d = rule_strengths([0.3, 0.7, 0.0], [0.0, 1.0, 0.0])
    assert d[1, 0] == pytest.approx(0.3)  # corner M, edge S -> S
    assert d[1, 1] == pytest.approx(0.7)
    assert CFG.rules[1][0] == "S" and CFG.rules[1][1] == "M"
    assert d.sum() == pytest.approx(1.0)


def test_zero_inputs_give_zero_strengths():
    assert not rule_strengths([0, 0, 0], [0, 0, 0]).any()


def test_single_full_rule_reproduces_its_gaussian():
    d = np.zeros((3, 3))
    d[1, 1] = 1.0  # -> M
    grid, mu = aggregate(d, CFG)
    np.testing.assert_allclose(mu, CFG.force_mfs[2](grid))


def test_symmetric_clipped_pair_is_symmetric():
    d = np.zeros((3, 3))
    d[0, 1] = 0.5  # -> S
    d[1, 2] = 0.5  # -> L
    grid, mu = aggregate(d, CFG)
    np.testing.assert_allclose(mu, mu[::-1], atol=1e-12)
    assert mu.max() == pytest.approx(0.5)
    assert defuzzify_cog(grid, mu) == pytest.approx(50.0, abs=1e-9)


def test_all_zero_aggregate_raises():
    grid, mu = aggregate(np.zeros((3, 3)), CFG)
    assert not mu.any()
    with pytest.raises(EmptyAggregate):
        defuzzify_cog(grid, mu)


def test_centered_gaussian_cog():
    grid = np.linspace(0, 100, 1001)
    assert defuzzify_cog(grid, GaussianMF(50.0, SIGMA)(grid)) == pytest.approx(50.0, abs=1e-6)


# ---------------------------------------------------------------- COG vs oracle


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=9, max_size=9).filter(lambda v: max(v) > 1e-3))
def test_cog_matches_fine_grid_oracle(levels):
    d = np.array(levels).reshape(3, 3)
    ours = defuzzify_cog(*aggregate(d, CFG))
    ref = cog_oracle_vec(d.ravel(), CFG.rule_index.ravel(), MEANS, SIGMA)
    assert ours == pytest.approx(ref, abs=1e-3)


def test_vector_oracle_agrees_with_loop_oracle():
    lv, tg = [0.2, 0.9, 0.4], [0, 2, 4]
    assert cog_oracle_vec(lv, tg, MEANS, SIGMA, 2001) == pytest.approx(cog_oracle(lv, tg, MEANS, SIGMA, 2001), abs=1e-9)


@given(st.lists(st.floats(0.0, 1.0), min_size=9, max_size=9).filter(lambda v: max(v) > 1e-3))
def test_cog_lies_within_support(levels):
    grid, mu = aggregate(np.array(levels).reshape(3, 3), CFG)
    g = defuzzify_cog(grid, mu)
    support = grid[mu > 0]
    assert support.min() <= g <= support.max()


# ---------------------------------------------------------------- controller


def test_both_maxima_command_matches_oracle():
    st_ = ControllerState.initial(CFG)
    cmd = suppress_step(DEFAULT_EDGE_RANGE[1], DEFAULT_CORNER_RANGE[1], st_, CFG)
    assert cmd is not None
    assert cmd.g_hat == pytest.approx(VL_FULL_COG, abs=1e-3)
    assert cmd.value == pytest.approx(min(VL_FULL_COG, CFG.g_max), abs=1e-3)
    assert st_.g_old == cmd.value


def test_lower_estimate_is_ignored():
    st_ = ControllerState(55.0)
    assert grip_policy(40.0, st_, CFG) is None
    assert st_.g_old == 55.0


def test_forced_large_estimate_is_clamped():
    cfg = default_config(g_max=80.0)
    st_ = ControllerState.initial(cfg)
    cmd = grip_policy(120.0, st_, cfg)
    assert cmd.value == 80.0 and cmd.g_hat == 120.0
    assert grip_policy(120.0, st_, cfg) is None  # already at the ceiling


def test_estimate_at_minimum_is_ignored():
    st_ = ControllerState.initial(CFG)
    assert grip_policy(CFG.g_min, st_, CFG) is None


def test_small_inputs_below_minimum_grip_give_no_command():
    st_ = ControllerState.initial(default_config(g_min=30.0))
    assert suppress_step(0, 0, st_, default_config(g_min=30.0)) is None
    assert st_.g_old == 30.0


@given(st.lists(st.tuples(st.floats(0, 200), st.floats(0, 200)), max_size=30))
def test_command_sequence_increases_within_bounds(inputs):
    st_ = ControllerState.initial(CFG)
    seen = []
    for e, c in inputs:
        cmd = suppress_step(e, c, st_, CFG)
        if cmd is not None:
            seen.append(cmd.value)
    assert all(b > a for a, b in zip(seen, seen[1:]))
    assert all(CFG.g_min <= v <= CFG.g_max for v in seen)
    assert CFG.g_min <= st_.g_old <= CFG.g_max


def test_output_nondecreasing_in_each_input():
    e_lo, e_hi = DEFAULT_EDGE_RANGE
    c_lo, c_hi = DEFAULT_CORNER_RANGE
    e_grid = np.linspace(e_lo - 10, e_hi + 10, 80)
    c_grid = np.linspace(c_lo - 10, c_hi + 10, 80)
    for c_peak in (c_lo, (c_lo + c_hi) / 2, c_hi):
        out = [infer(e, c_peak, CFG) for e in e_grid]
        assert all(b >= a - 1e-9 for a, b in zip(out, out[1:]))
    for e_peak in (e_lo, (e_lo + e_hi) / 2, e_hi):
        out = [infer(e_peak, c, CFG) for c in c_grid]
        assert all(b >= a - 1e-9 for a, b in zip(out, out[1:]))


@given(e=st.floats(0, 200), c=st.floats(0, 250))
def test_scale_consistency(e, c):
    doubled = FuzzyConfig.from_ranges(
        tuple(2 * v for v in DEFAULT_EDGE_RANGE), tuple(2 * v for v in DEFAULT_CORNER_RANGE)
    )
    np.testing.assert_allclose(
        rule_strengths(fuzzify(2 * e, doubled.edge_mfs), fuzzify(2 * c, doubled.corner_mfs)),
        rule_strengths(fuzzify(e, CFG.edge_mfs), fuzzify(c, CFG.corner_mfs)),
        atol=1e-12,
    )
    assert infer(2 * e, 2 * c, doubled) == pytest.approx(infer(e, c, CFG), abs=1e-9)


@given(e=st.floats(-50, 300), c=st.floats(-50, 300))
def test_output_within_force_range(e, c):
    assert 0.0 <= infer(e, c, CFG) <= 100.0


# ---------------------------------------------------------------- configuration


def test_config_roundtrip(tmp_path):
    path = tmp_path / "fuzzy.json"
    path.write_text(json.dumps(CFG.to_dict()))
    assert FuzzyConfig.load(path) == CFG


def test_config_from_ranges_document():
    cfg = FuzzyConfig.from_dict({"edge_range": [0, 10], "corner_range": [5, 25], "g_min": 10})
    assert cfg.edge_mfs[1].b == 5.0 and cfg.corner_mfs[2].c == 25.0 and cfg.g_min == 10.0


@pytest.mark.parametrize(
    "change",
    [
        {"rules": [["VS", "S"], ["S", "M", "L"], ["M", "L", "VL"]]},
        {"rules": [["VS", "S", "XL"], ["S", "M", "L"], ["M", "L", "VL"]]},
        {"force_mfs": [[10, 8], [30, 8], [30, 8], [70, 8], [90, 8]]},
        {"force_mfs": [[10, 8], [30, 8], [50, 8], [70, 8]]},
        {"g_min": 90, "g_max": 50},
        {"cog_resolution": 2},
        {"edge_mfs": [[0, 0, 5], [0, 5, 10]]},
    ],
)
def test_config_validation(change):
    with pytest.raises(ConfigError):
        FuzzyConfig.from_dict({**CFG.to_dict(), **change})


def test_equal_partition_needs_positive_span():
    with pytest.raises(ConfigError):
        equal_partition(5.0, 5.0)


def test_calibration_ranges():
    assert calibrate_input_ranges([(10, 60), (40, 90), (25, 70)]) == ((10.0, 40.0), (60.0, 90.0))
    with pytest.raises(ConfigError):
        calibrate_input_ranges([])
