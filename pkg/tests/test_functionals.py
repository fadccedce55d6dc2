import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sigmaq.core import Path, RngSpec, TimeGrid, make_grid
from sigmaq.functionals import (
    CalibrationError,
    calibrate_local_time,
    drawdown,
    interval_max,
    interval_min,
    last_level_time,
    last_passage,
    local_time_band,
    positive_part_above,
    running_max,
    step_envelope_min,
)
from sigmaq.simulate import ProcessSpec, reflected_bm_paths

finite = st.floats(-100, 100, allow_nan=False)


def test_drawdown_examples():
    p = Path(TimeGrid(1.0, 4), np.array([1.0, 2.0, 1.5, 3.0, 0.0]))
    dd, rdd = drawdown(p)
    np.testing.assert_allclose(dd.values, [0, 0, 0.5, 0, 3])
    np.testing.assert_allclose(rdd.values, [0, 0, 0.25, 0, 1])
    _, none = drawdown(Path(TimeGrid(1.0, 1), np.array([0.0, 1.0])))
    assert none is None
    arr = np.array([[0.0, 1.0, 0.5], [2.0, 1.0, 4.0]])
    d, r = drawdown(arr)
    assert np.all(np.isnan(r[0])) and r[1, 1] == 0.5
    np.testing.assert_allclose(running_max(arr), [[0, 1, 1], [2, 2, 4]])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=finite))
def test_drawdown_nonnegative_and_zero_at_new_highs(v):
    dd, _ = drawdown(v[None, :])
    assert np.all(dd >= 0)
    s = np.maximum.accumulate(v)
    assert np.all(dd[0][v == s] == 0)


def test_interval_envelopes():
    v = np.array([[3.0, 1.0, 2.0, 5.0, 0.0]])
    np.testing.assert_array_equal(interval_min(v, 2), [[1.0, 0.0]])
    np.testing.assert_array_equal(interval_max(v, 2), [[3.0, 5.0]])
    np.testing.assert_array_equal(step_envelope_min(np.array([[4.0, 1.0, 2.0, 3.0]]), 2), [[1.0, 2.0]])
    with pytest.raises(ValueError):
        interval_min(v, 3)


def test_last_passage_examples():
    g = TimeGrid(0.5, 6)
    x = np.array([0.0, 1.0, 0.0, 2.0, 2.0, 0.2, 1.0])
    lp = last_passage(Path(g, x), 0.0, 1e-3, 0.5)
    assert lp.occurred_after_t and lp.g_hat == 1.0
    lp = last_passage(Path(g, x), 0.0, 1e-3, 1.0)
    assert not lp.occurred_after_t and lp.no_visit_after_t
    lp = last_passage(Path(g, x), 0.5, 1e-3, 1.0)
    assert lp.occurred_after_t and lp.g_hat == 2.5
    # an interval minimum that dips to 0 counts as a visit
    low = np.minimum(x[:-1], x[1:])
    low[4] = 0.0
    assert last_passage(Path(g, x), 0.0, 1e-3, 1.0, low=low[None, :]).occurred_after_t
    with pytest.raises(ValueError):
        last_passage(Path(g, x), 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        last_passage(Path(g, x), 0.0, 1e-3, 3.0)


def test_last_level_time_sign_change_and_band():
    g = TimeGrid(1.0, 5)
    m = np.array([1.0, 1.5, 0.8, 0.9, 0.7, 0.6])
    r = last_level_time(Path(g, m), 1.0, 1.0)
    assert r.g_hat == 2.0 and r.occurred_after_t
    r = last_level_time(Path(g, m), 1.0, 2.0)
    assert not r.occurred_after_t
    never = last_level_time(Path(g, m + 5.0), 1.0, 0.0)
    assert never.g_hat is None and not never.occurred_after_t
    with pytest.raises(ValueError):
        last_level_time(Path(g, m), 0.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 17, elements=st.floats(0, 3)), st.integers(0, 15), st.integers(0, 15))
def test_no_visit_event_shrinks_as_t_decreases(x, i, j):
    g = TimeGrid(0.25, 16)
    t1, t2 = sorted((i, j))
    e1 = last_passage(x[None, :], 0.0, 0.1, t1 * 0.25, grid=g).no_visit_after_t[0]
    e2 = last_passage(x[None, :], 0.0, 0.1, t2 * 0.25, grid=g).no_visit_after_t[0]
    # {g <= t1} implies {g <= t2}
    assert (not e1) or e2


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 21, elements=st.floats(0, 2)), st.floats(0.01, 1.0))
def test_band_local_time_nondecreasing_and_starts_at_zero(x, eps):
    a = local_time_band(x[None, :], eps, 1.0, TimeGrid(0.1, 20))
    assert a[0, 0] == 0.0 and np.all(np.diff(a, axis=1) >= 0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 10, elements=finite), st.floats(0, 5), st.floats(0, 5))
def test_positive_part_monotone_in_level(x, a1, a2):
    lo, hi = sorted((a1, a2))
    assert np.all(positive_part_above(x, lo) >= positive_part_above(x, hi))


def test_local_time_band_value():
    g = TimeGrid(0.5, 4)
    a = local_time_band(Path(g, np.array([0.0, 0.05, 1.0, 0.0, 0.0])), 0.1)
    np.testing.assert_allclose(a.values, [0, 5, 10, 10, 15])


def test_calibration_recovers_mean_identity():
    spec = ProcessSpec("reflected_bm")
    c = calibrate_local_time(spec, 0.05, pilot_n=4000, dt=2.0**-8, seed=3)
    g = make_grid(1.0, 2.0**-8)
    x, a, _ = reflected_bm_paths(g, RngSpec(3), 4000)
    raw = local_time_band(x, 0.05, 1.0, g)[:, -1]
    assert c * raw.mean() == pytest.approx(x[:, -1].mean(), rel=1e-12)
    # calibrated band local time tracks the exact one
    assert c * raw.mean() == pytest.approx(a[:, -1].mean(), rel=0.05)
    with pytest.raises(CalibrationError):
        calibrate_local_time(np.ones((5, 257)), 0.05)
