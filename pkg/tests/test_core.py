import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigmaq.core import (
    InsufficientDataError,
    MCEstimate,
    Path,
    RngSpec,
    TimeGrid,
    equality_test,
    exact,
    make_grid,
    map_paths,
    mc_estimate,
)


def test_grid_stores_steps_not_times():
    g = make_grid(64.0, 2.0**-10)
    assert g.n_steps == 65536
    assert g.t_end == 64.0
    assert g.time(1024) == 1.0
    assert g.index(1.0) == 1024
    assert g.times()[-1] == 64.0


@pytest.mark.parametrize("t_end,dt", [(1.0, 0.0), (1.0, -0.1), (0.0, 0.1), (1.0, 0.3), (math.inf, 0.1)])
def test_make_grid_rejects_bad_input(t_end, dt):
    with pytest.raises(ValueError):
        make_grid(t_end, dt)


def test_index_off_grid_raises_and_floor_rounds_down():
    g = TimeGrid(0.25, 8)
    with pytest.raises(ValueError):
        g.index(0.3)
    assert g.index_floor(0.3) == 1
    assert g.coarsen(2).dt == 0.5


def test_path_is_read_only():
    p = Path(TimeGrid(0.5, 2), np.array([0.0, 1.0, 2.0]))
    assert p.at(0.5) == 1.0
    with pytest.raises(ValueError):
        p.values[0] = 3.0


def test_rng_spec_range():
    RngSpec(2**64 - 1, 2**64 - 1)
    with pytest.raises(ValueError):
        RngSpec(-1)
    with pytest.raises(ValueError):
        RngSpec(2**64)


def test_mc_estimate_basic():
    e = mc_estimate([1.0, 2.0, 3.0, 4.0])
    assert e.mean == 2.5
    assert e.std_error == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert e.z == pytest.approx(2.5758293035489)
    with pytest.raises(InsufficientDataError):
        mc_estimate([1.0])
    with pytest.raises(ValueError):
        mc_estimate([1.0, np.nan])


def test_equality_test_pass_fail_and_record():
    a = MCEstimate(1.0, 0.1, 100)
    assert equality_test(a, 1.25, 3).passed
    assert not equality_test(a, 1.35, 3).passed
    assert equality_test(a, 1.35, 3, 0.06).passed
    r = equality_test(exact(1.0), exact(1.0))
    assert r.passed and r.z_score == 0.0
    assert not equality_test(exact(1.0), exact(1.1)).passed
    d = equality_test(a, 1.2, name="x").to_dict()
    assert d["name"] == "x" and d["passed"] and "allowance" in d
    assert equality_test(a, 1.2, name="x").line().startswith("[PASS] x")


@settings(max_examples=60, deadline=None)
@given(m1=st.floats(-10, 10), m2=st.floats(-10, 10), s1=st.floats(0, 2), s2=st.floats(0, 2),
       z=st.floats(0, 5), allow=st.floats(0, 3))
def test_equality_test_is_symmetric_and_monotone(m1, m2, s1, s2, z, allow):
    a, b = MCEstimate(m1, s1, 10), MCEstimate(m2, s2, 10)
    r = equality_test(a, b, z, allow)
    assert r.passed == equality_test(b, a, z, allow).passed
    if r.passed:
        assert equality_test(a, b, z + 1, allow + 1).passed


def _chunk(first, count):
    return {"idx": np.arange(first, first + count, dtype=float), "sq": np.arange(first, first + count) ** 2.0}


@pytest.mark.parametrize("threads", [1, 2, 5])
def test_map_paths_order_does_not_depend_on_threads(threads):
    out = map_paths(_chunk, 103, 10, threads)
    np.testing.assert_array_equal(out["idx"], np.arange(103.0))
    np.testing.assert_array_equal(out["sq"], np.arange(103.0) ** 2)
