import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtri

from sigmaq import _fallback, backend

BACKENDS = backend.available()


def kern(name):
    return _fallback if name == "python" else pytest.importorskip("sigmaq._kernels")


@pytest.mark.parametrize("name", BACKENDS)
@pytest.mark.parametrize("seed,stream,ctr", [(0, 0, (0, 0, 0, 0)), (42, 7, (3, 11, 2, 0)),
                                              (2**63 + 5, 2**64 - 1, (2**64 - 2, 1, 0, 9))])
def test_philox_matches_numpy(name, seed, stream, ctr):
    # numpy increments the counter before each block, so block c comes from counter c - 1
    c0, c1, c2, c3 = ctr
    as_int = c0 | (c1 << 64) | (c2 << 128) | (c3 << 192)
    prev = (as_int - 1) % 2**256
    np_ctr = np.array([(prev >> (64 * i)) & (2**64 - 1) for i in range(4)], dtype=np.uint64)
    ref = np.random.Philox(counter=np_ctr, key=np.array([seed, stream], dtype=np.uint64))
    expected = ref.random_raw(4)
    got = kern(name).philox_block(seed, stream, *ctr)
    np.testing.assert_array_equal(got, expected)


def test_ppnd16_matches_ndtri():
    p = np.concatenate([np.linspace(1e-12, 1 - 1e-12, 100_001), [1e-300, 1e-50, 0.5, 0.425, 0.075]])
    z = _fallback.ppnd16(p)
    ref = ndtri(p)
    np.testing.assert_allclose(z, ref, rtol=2e-15, atol=2e-15)


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")
def test_ppnd16_backends_agree():
    k = pytest.importorskip("sigmaq._kernels")
    p = np.random.default_rng(0).random(50_000)
    a = np.empty_like(p)
    a[:] = k.ppnd16(p)
    np.testing.assert_allclose(a, _fallback.ppnd16(p), rtol=0, atol=1e-15)


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")
def test_fill_backends_agree():
    k = pytest.importorskip("sigmaq._kernels")
    a, b = np.empty((5, 37)), np.empty((5, 37))
    k.fill_uniforms(9, 100, a, 0)
    _fallback.fill_uniforms(9, 100, b, 0)
    assert np.array_equal(a, b)
    k.fill_normals(9, 100, a, 0)
    _fallback.fill_normals(9, 100, b, 0)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")
def test_poisson_gamma_backends_bit_identical():
    k = pytest.importorskip("sigmaq._kernels")
    lam = np.array([0.0, 0.3, 4.0, 9.99, 10.0, 55.0, 1e4])
    shape = np.array([0.2, 0.5, 1.0, 1.5, 7.0, 300.0, 0.01])
    assert np.array_equal(np.asarray(k.poisson_draws(3, 5, lam, 17)),
                          np.asarray(_fallback.poisson_draws(3, 5, lam, 17)))
    assert np.array_equal(np.asarray(k.gamma_draws(3, 5, shape, 17)),
                          np.asarray(_fallback.gamma_draws(3, 5, shape, 17)))


@pytest.mark.parametrize("name", BACKENDS)
def test_uniforms_in_open_interval_and_normal_moments(name):
    k = kern(name)
    u = np.empty((4, 25_000))
    k.fill_uniforms(1, 0, u, 1)
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / u.size)
    z = np.empty((4, 25_000))
    k.fill_normals(1, 0, z, 0)
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * np.sqrt(2 / z.size)


@pytest.mark.parametrize("name", BACKENDS)
def test_streams_are_distinct(name):
    k = kern(name)
    z = np.empty((3, 64))
    k.fill_normals(5, 0, z, 0)
    assert not np.array_equal(z[0], z[1]) and not np.array_equal(z[1], z[2])


@pytest.mark.parametrize("name", BACKENDS)
def test_poisson_and_gamma_moments(name):
    k = kern(name)
    for lam in (2.5, 40.0):
        x = np.array([np.asarray(k.poisson_draws(11, 0, np.full(20_000, lam), s)) for s in range(2)]).ravel()
        assert abs(x.mean() - lam) < 4 * np.sqrt(lam / x.size)
        assert np.all(x == np.round(x)) and x.min() >= 0
    for a in (0.4, 3.0):
        g = np.asarray(k.gamma_draws(11, 0, np.full(40_000, a), 0))
        assert abs(g.mean() - a) < 4 * np.sqrt(a / g.size)
        assert g.min() > 0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), stream=st.integers(0, 2**64 - 8))
def test_fill_is_a_pure_function_of_key(seed, stream):
    k = backend.kernels
    a = np.empty((2, 9))
    b = np.empty((2, 9))
    k.fill_normals(seed, stream, a, 0)
    k.fill_normals(seed, stream, b, 0)
    assert np.array_equal(a, b)
    # row p of a batch equals the single stream stream0 + p
    c = np.empty((1, 9))
    k.fill_normals(seed, stream + 1, c, 0)
    assert np.array_equal(a[1], c[0])
