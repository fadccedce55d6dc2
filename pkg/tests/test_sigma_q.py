import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from sigmaq.core import RngSpec, TimeGrid, make_grid
from sigmaq.sigma_q import (
    A_INF_INFINITE,
    CLASS_D,
    N_PLUS_CLASS_D,
    ONE,
    Exponential,
    GammaSpec,
    Indicator,
    InvalidPairError,
    PolynomialCutoff,
    QFunctionalSpec,
    SigmaEnsemble,
    Unit,
    UnsupportedProcessError,
    UnsupportedRegimeError,
    _bessel_drift,
    assemble_sigma,
    check_sigma_axioms,
    cross_weighted,
    f_independence,
    horizon_consistency,
    mf_martingale,
    q_expect,
    ratio_limit,
    screen_pair,
    transform_f,
    truncation_term,
    weight_from_dict,
)
from sigmaq.simulate import ProcessSpec

LEVEL_HALF_ORACLE = 0.3955931148  # E[(|B_1| - 1/2)^+]
TRANSFORM_ORACLE = 0.4768434163  # 1 - 2 e^{1/2} Phi(-1)

CATALOGUE = [Exponential(), Exponential(2.0, 2.0), Exponential(0.5, 3.0), Indicator(1.0),
             Indicator(2.0, 0.5), PolynomialCutoff(1.0, 2.0), PolynomialCutoff(3.0, 1.0, 2.0)]


@pytest.fixture(scope="module")
def reflected():
    return assemble_sigma(ProcessSpec("reflected_bm"), make_grid(16.0, 2.0**-6), 20_000, RngSpec(11),
                          stride=16)


@pytest.fixture(scope="module")
def bessel():
    return assemble_sigma(ProcessSpec("bessel_power", r=1 / 3), make_grid(4.0, 2.0**-6), 4_000,
                          RngSpec(12), stride=8, halving=True)


@pytest.fixture(scope="module")
def put():
    return assemble_sigma(ProcessSpec("gbm_martingale"), make_grid(16.0, 2.0**-7), 4_000, RngSpec(13),
                          transform="put", strike=1.0, stride=16, halving=True)


def test_oracles_by_quadrature():
    v = integrate.quad(lambda x: 2 * (x - 0.5) * stats.norm.pdf(x), 0.5, np.inf)[0]
    assert v == pytest.approx(LEVEL_HALF_ORACLE, abs=1e-10)
    # A_1 = S_1 has the law of |B_1|
    rhs = integrate.quad(lambda x: 2 * (1 - math.exp(-x)) * stats.norm.pdf(x), 0, np.inf)[0]
    assert rhs == pytest.approx(TRANSFORM_ORACLE, abs=1e-10)


@pytest.mark.parametrize("f", CATALOGUE, ids=repr)
def test_weight_closed_forms(f):
    x = np.array([0.0, 0.3, 0.9999, 1.0, 1.7, 5.0])
    for xi, Fi in zip(x, f.F(x)):
        assert Fi == pytest.approx(integrate.quad(lambda u: float(f.f(np.array([u]))[0]), 0, xi)[0], abs=1e-9)
    assert f.total == pytest.approx(integrate.quad(lambda u: float(f.f(np.array([u]))[0]), 0, 50, limit=200)[0],
                                    abs=1e-8)
    np.testing.assert_allclose(f.G(x), f.total - f.F(x), rtol=1e-12, atol=1e-15)
    assert np.all(np.diff(f.f(np.linspace(0, 5, 50))) <= 0)
    assert weight_from_dict(f.to_dict()) == f


def test_screen_pair():
    screen_pair(Exponential(), Exponential(2.0, 2.0))
    screen_pair(Indicator(1.0), Exponential())
    screen_pair(Indicator(1.0), Indicator(2.0))
    with pytest.raises(InvalidPairError):
        screen_pair(Exponential(), Indicator(1.0))
    with pytest.raises(InvalidPairError):
        screen_pair(Indicator(2.0), Indicator(1.0))
    with pytest.raises(InvalidPairError):
        screen_pair(Unit(), Exponential())


def test_bessel_drift_matches_quadrature():
    r, dt = 1 / 3, 2.0**-6
    delta = 2 * (1 - r)
    z = np.array([0.0, 1e-4, 0.01, 0.05, 0.3])
    got = _bessel_drift(z, r, dt)
    for zi, gi in zip(z, got):
        if zi == 0:
            ref = (2 * dt) ** r * math.gamma(delta / 2 + r) / math.gamma(delta / 2)
        else:
            dens = lambda y: stats.ncx2.pdf(y / dt, delta, zi / dt) / dt  # noqa: E731
            ref = integrate.quad(lambda y: y**r * dens(y), 0, np.inf, limit=400)[0] - zi**r
        assert gi == pytest.approx(ref, abs=1e-9)


def test_unsupported_process():
    with pytest.raises(UnsupportedProcessError):
        assemble_sigma(ProcessSpec("ou_bridge"), make_grid(0.5, 0.25), 2, RngSpec(0))
    with pytest.raises(UnsupportedProcessError):
        assemble_sigma(ProcessSpec("brownian"), make_grid(1.0, 0.25), 2, RngSpec(0))


def test_regimes(reflected, bessel, put):
    assert reflected.regime == bessel.regime == A_INF_INFINITE
    assert put.regime == CLASS_D and put.x_inf == 1.0
    dd = assemble_sigma(ProcessSpec("inverse_bessel3"), make_grid(1.0, 2.0**-4), 10, RngSpec(0),
                        transform="drawdown")
    assert dd.regime == N_PLUS_CLASS_D
    with pytest.raises(UnsupportedRegimeError):
        mf_martingale(put, Exponential())


@pytest.mark.parametrize("name", ["reflected", "bessel", "put"])
def test_sigma_axioms(name, request):
    ens = request.getfixturevalue(name)
    eps = {"reflected": 0.01, "bessel": 2 * (2.0**-6) ** (1 / 3), "put": 1e-6}[name]
    results = check_sigma_axioms(ens, eps, 0.02, times=(1.0, 4.0))
    for r in results:
        assert r.passed, r.line()


def test_axioms_detect_broken_decomposition(reflected):
    # A shifted by one coarse step is no longer carried by the zero set
    lagged = np.concatenate([reflected.A[:, :1], reflected.A[:, :-1]], axis=1)
    bad = SigmaEnsemble(reflected.grid, reflected.X, lagged + 0.5 * reflected.grid.times(), A_INF_INFINITE,
                        0.0, reflected.x_low)
    mart, mono, supp = check_sigma_axioms(bad, 0.01, 0.02, times=(4.0, 16.0))
    assert mono.passed and not mart.passed and not supp.passed


def test_mf_bounds_pathwise(reflected):
    for f in CATALOGUE:
        mf = mf_martingale(reflected, f)
        assert np.all(mf >= 0)
        assert np.all(mf <= f.total + f.f_max * reflected.X + 1e-12)


def test_mf_mean_constant(reflected):
    mf = mf_martingale(reflected, Exponential())
    for t in (1.0, 4.0, 16.0):
        v = mf[:, reflected.index(t)]
        assert abs(v.mean() - 1.0) < 3 * v.std() / math.sqrt(v.size)


def test_q_expect_identities(reflected):
    est = q_expect(reflected, QFunctionalSpec("indicator", 1.0))
    assert est.mean == reflected.at("X", 1.0).mean()
    est = q_expect(reflected, QFunctionalSpec("indicator", 1.0, a=0.5))
    assert abs(est.mean - LEVEL_HALF_ORACLE) < 3 * est.std_error
    with pytest.raises(UnsupportedRegimeError):
        q_expect(reflected, QFunctionalSpec("indicator", 1.0, method="density"))
    with pytest.raises(ValueError):
        QFunctionalSpec("indicator", 1.0, GammaSpec("indicator", "X", 2.0))


@settings(max_examples=30, deadline=None)
@given(a1=st.floats(0, 3), a2=st.floats(0, 3), c=st.floats(0, 2))
def test_q_expect_pathwise_monotone_in_level(reflected, a1, a2, c):
    lo, hi = sorted((a1, a2))
    g = GammaSpec("indicator", "X", 0.5, "<=", c).evaluate(reflected)
    x = reflected.at("X", 1.0)
    assert np.all(g * np.maximum(x - lo, 0) >= g * np.maximum(x - hi, 0))


def test_horizon_consistency(reflected):
    for gam in (ONE, GammaSpec("indicator", "X", 0.5, "<=", 1.0)):
        r = horizon_consistency(reflected, gam, 1.0, 0.5, 16.0)
        assert r.passed, r.line()
    r = horizon_consistency(reflected, ONE, 1.0, 0.0, 16.0, eps=0.01)
    assert r.allowance == pytest.approx(0.02)


def test_transform_stays_in_class(reflected):
    for f in CATALOGUE:
        tr = transform_f(reflected, f)
        res = check_sigma_axioms(tr, 0.01 * f.f_max, 0.02, times=(1.0, 4.0))
        assert all(r.passed for r in res), [r.line() for r in res]
    tr = transform_f(reflected, Exponential())
    lhs, rhs = tr.at("X", 1.0), tr.at("A", 1.0)
    d = lhs - rhs
    assert abs(d.mean()) < 3 * d.std() / math.sqrt(d.size)
    assert abs(lhs.mean() - TRANSFORM_ORACLE) < 3 * lhs.std() / math.sqrt(lhs.size)


def test_f_independence_equal_pair_is_exact_identity(reflected):
    f = Exponential()
    cw = cross_weighted(reflected, f, f, 16.0)
    np.testing.assert_allclose(cw, mf_martingale(reflected, f)[:, -1])
    np.testing.assert_allclose(truncation_term(reflected, f, f, 16.0), 0.0, atol=1e-15)


def test_f_independence_small(reflected):
    r = f_independence(reflected, Indicator(1.0), Exponential(), 16.0)
    assert r.passed, r.line()
    # the gap to int f1 splits exactly into the martingale part and the horizon term
    a = reflected.at("A", 16.0)
    mf1 = Indicator(1.0).G(a) + Indicator(1.0).f(a) * reflected.at("X", 16.0)
    np.testing.assert_allclose(cross_weighted(reflected, Indicator(1.0), Exponential(), 16.0),
                               mf1 + truncation_term(reflected, Indicator(1.0), Exponential(), 16.0))
    with pytest.raises(InvalidPairError):
        f_independence(reflected, Exponential(), Indicator(1.0), 16.0)


def test_ratio_limit_decreases(reflected):
    est = ratio_limit(reflected, Exponential(), [1.0, 4.0, 16.0])
    means = [e.mean for e in est]
    assert means[0] > means[1] > means[2] > 0


def test_ensemble_validation():
    g = TimeGrid(1.0, 2)
    with pytest.raises(ValueError):
        SigmaEnsemble(g, np.zeros((2, 3)), np.zeros((2, 2)), A_INF_INFINITE)
    with pytest.raises(ValueError):
        SigmaEnsemble(g, np.zeros((2, 3)), np.zeros((2, 3)), "other")
    e = SigmaEnsemble.from_arrays(g, np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(KeyError):
        e.at("M", 1.0)
