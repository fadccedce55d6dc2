import math

import numpy as np
import pytest
from scipy import integrate, stats

from sigmaq.core import exact, equality_test
from sigmaq.experiments import (
    REGISTRY,
    DegenerateRunError,
    InvalidFunctionalError,
    Report,
    drawdown_representation,
    drifted_survival,
    extension_failure_demo,
    inverse_bessel3_mean,
    local_time_functional,
    penalisation_curve,
    put_identity,
    put_price,
    ratio_estimate,
    reflected_positive_part,
    transform_oracle,
)
from sigmaq.sigma_q import Exponential, Indicator, PolynomialCutoff, Unit

# Frozen oracle values; each is recomputed below by an independent route.
PUT = {(1.0, 0.25): 0.1974126514, (1.0, 1.0): 0.3829249225, (2.0, 0.25): 1.0261386993,
       (2.0, 1.0): 1.1906101152}
PENALISED_CURVE = {1.0: 0.8556243919, 4.0: 0.9598504379, 16.0: 0.9896802674, 64.0: 0.9974019255}
DRIFTED_LIMIT = 0.8646647168  # 1 - e^{-2}


@pytest.mark.parametrize("K,t", list(PUT))
def test_put_price_by_quadrature(K, t):
    s = math.sqrt(t)
    ref = integrate.quad(lambda z: max(K - math.exp(s * z - t / 2), 0.0) * stats.norm.pdf(z), -12, 12,
                         points=[(math.log(K) + t / 2) / s], limit=200)[0]
    assert ref == pytest.approx(PUT[K, t], abs=1e-9)
    assert put_price(K, t) == pytest.approx(PUT[K, t], abs=1e-10)


@pytest.mark.parametrize("t", list(PENALISED_CURVE))
def test_penalised_curve_by_quadrature(t):
    # A_t has the law of sqrt(t)|N|, so E[1{A_t <= 1}] is a Gaussian mass
    mass = integrate.quad(lambda u: 2 * stats.norm.pdf(u), 0, 1 / math.sqrt(t))[0]
    assert math.sqrt(math.pi * t / 2) * mass == pytest.approx(PENALISED_CURVE[t], abs=1e-9)
    got = math.sqrt(math.pi * t / 2) * local_time_functional(Indicator(1.0), t)
    assert got == pytest.approx(PENALISED_CURVE[t], abs=1e-10)
    assert abs(PENALISED_CURVE[64.0] - 1.0) < 0.02


def test_local_time_functional_closed_forms_match_quadrature():
    for phi in (Exponential(), Exponential(2.0, 2.0), Indicator(2.0, 0.5)):
        ref = integrate.quad(lambda u: 2 * stats.norm.pdf(u) * float(phi.f(np.array([2 * u]))[0]), 0, np.inf)[0]
        assert local_time_functional(phi, 4.0) == pytest.approx(ref, abs=1e-9)
    # polynomial cutoff goes through the generic quadrature branch
    assert local_time_functional(PolynomialCutoff(1.0, 2.0), 1.0) > 0


def test_drifted_survival_decreases_to_limit():
    assert drifted_survival(math.inf) == pytest.approx(DRIFTED_LIMIT, abs=1e-10)
    assert 1 - math.exp(-2) == pytest.approx(DRIFTED_LIMIT, abs=1e-10)
    # decreasing in t towards the limit
    vals = [drifted_survival(t) for t in (1.0, 8.0, 32.0, 1e4)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(DRIFTED_LIMIT, abs=1e-10)


def test_other_oracles():
    assert inverse_bessel3_mean(1.0) == pytest.approx(0.6826894921, abs=1e-10)
    assert reflected_positive_part(0.5) == pytest.approx(0.3955931148, abs=1e-10)
    assert transform_oracle() == pytest.approx(0.4768434163, abs=1e-10)


def test_ratio_estimate_delta_method_and_degenerate():
    rng = np.random.default_rng(0)
    den = rng.random(4000) + 0.5
    num = 2 * den + 0.1 * rng.standard_normal(4000)
    e = ratio_estimate(num, den)
    assert abs(e.mean - 2.0) < 4 * e.std_error
    with pytest.raises(DegenerateRunError):
        ratio_estimate(np.ones(10), np.zeros(10))


def test_penalisation_rejects_non_integrable_weight():
    with pytest.raises(InvalidFunctionalError):
        penalisation_curve(phi=Unit(), n_paths=100)


def test_put_identity_validates_input():
    with pytest.raises(ValueError):
        put_identity(K=0.0, n_paths=10)
    with pytest.raises(ValueError):
        put_identity(t=64.0, T=64.0, n_paths=10)


def test_drawdown_at_time_zero_is_trivial():
    rep = drawdown_representation(t=0.0, n_paths=10)
    assert rep.passed and len(rep.tests) == 1


def test_extension_bracket_is_optional():
    kw = dict(t_list=(1.0, 2.0), n_paths=500, dt=2.0**-6)
    with_bracket = extension_failure_demo(**kw)
    without = extension_failure_demo(**kw, bracket=None)
    assert len(with_bracket.tests) == len(without.tests) + 1


def test_report_extend_prefixes_values():
    a, b = Report("a"), Report("b")
    b.tests.append(equality_test(exact(1.0), exact(1.0), name="x"))
    b.values["v"] = 1.0
    a.extend(b)
    assert a.values == {"b.v": 1.0} and len(a.tests) == 1 and a.passed


def test_registry_entries_are_consistent():
    assert len(REGISTRY) >= 12
    for name, e in REGISTRY.items():
        assert e.name == name and e.anchor and e.description
        assert callable(e.run)


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_smoke_settings_pass(name):
    e = REGISTRY[name]
    rep = e.run(**e.smoke)
    assert rep.tests, name
    assert rep.passed, "\n".join(t.line() for t in rep.tests)
