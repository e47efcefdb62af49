import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special as sp

from ces.bounds import (DKW, HYBRID, MARKOV, MARKOV_ASYMPTOTIC, BoundInputs, all_bounds, corrected_level, dkw_bound,
                        hybrid_bound, markov_asymptotic, markov_bound, markov_rank)
from ces.special import betainc, betaincinv, normal_cdf, normal_quantile


def test_betainc_against_scipy():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(2000):
        a, b = np.exp(rng.uniform(np.log(0.5), np.log(2e4), 2))
        x = rng.uniform()
        ref = sp.betainc(a, b, x)
        if ref < 1e-300:
            continue
        worst = max(worst, abs(betainc(x, a, b) - ref) / ref)
    assert worst < 1e-9


def test_betainc_against_mpmath():
    for x, a, b in [(0.3, 2.5, 40.0), (0.55, 120.0, 90.0), (0.05, 30.0, 600.0)]:
        with mpmath.workdps(40):
            ref = float(mpmath.betainc(a, b, 0, x, regularized=True))
        assert betainc(x, a, b) == pytest.approx(ref, rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1))
def test_uniform_case_is_identity(x):
    assert betainc(x, 1.0, 1.0) == pytest.approx(x, abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-8, 1 - 1e-8), st.floats(0.5, 5000), st.floats(0.5, 5000))
def test_inverse_round_trip(p, a, b):
    x = betaincinv(p, a, b)
    assert 0.0 <= x <= 1.0
    assert betainc(x, a, b) == pytest.approx(p, rel=1e-8, abs=1e-12)


def test_betainc_edges_and_errors():
    assert betainc(0.0, 3, 4) == 0.0 and betainc(1.0, 3, 4) == 1.0
    with pytest.raises(ValueError):
        betainc(1.5, 1, 1)
    with pytest.raises(ValueError):
        betainc(0.5, 0, 1)


def test_normal_quantile_examples():
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.975) == pytest.approx(float(mpmath.sqrt(2) * mpmath.erfinv(0.95)), abs=1e-9)
    assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
    with mpmath.workdps(40):
        deep = float(mpmath.findroot(lambda z: mpmath.ncdf(z) - mpmath.mpf("1e-12"), -7))
    assert normal_quantile(1e-12) == pytest.approx(deep, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-12, 1 - 1e-12))
def test_normal_quantile_inverts_cdf(p):
    z = normal_quantile(p)
    assert abs(normal_cdf(z) - p) <= 1e-9
    if 1 - (1 - p) == p:
        assert normal_quantile(1 - p) == -z


def test_dkw_example():
    # (1 + 1/n)(1 - a) - (sqrt(log(2T)/2) + 1/3) / sqrt(n)
    expect = (1 + 1 / 8000) * 0.9 - (math.sqrt(math.log(200) / 2) + 1 / 3) / math.sqrt(8000)
    r = dkw_bound(BoundInputs(100, 8000, 0.1))
    assert r.kind == DKW and r.value == pytest.approx(expect, abs=1e-12)
    assert abs(r.value - 0.8782) < 5e-4


def test_dkw_large_sample_limit():
    assert abs(dkw_bound(BoundInputs(100, 10**8, 0.1)).value - 0.9) < 1e-3


def test_dkw_hand_value():
    # 1.01 * 0.5 - (0.5887050112577373 + 0.3333333333333333) / 10
    assert dkw_bound(BoundInputs(1, 100, 0.5)).value == pytest.approx(0.4127961655, abs=1e-10)


def test_markov_example_and_asymptotic_agreement():
    x = BoundInputs(100, 8000, 0.1, b=100)
    m, a = markov_bound(x), markov_asymptotic(x)
    assert m.kind == MARKOV and a.kind == MARKOV_ASYMPTOTIC
    assert m.value == pytest.approx(0.877, abs=2e-3)
    assert abs(m.value - a.value) <= 0.02
    # independent inverse-beta oracle
    l = math.floor(0.1 * 8001)
    assert m.value == pytest.approx(sp.betaincinv(8001 - l, l, 1 / 10_000) * 0.99, rel=1e-8)
    assert a.value == pytest.approx(0.99 * (0.9 - math.sqrt(0.09 / 8001) * math.sqrt(2 * math.log(10_000))), abs=1e-12)
    assert a.value == pytest.approx(0.8767, abs=1e-4)


def test_markov_is_vacuous_below_rank_one():
    x = BoundInputs(10, 5, 0.1)
    assert markov_rank(x) == 0
    r = markov_bound(x)
    assert r.vacuous and r.value == -math.inf
    h = hybrid_bound(x)
    assert h.value == dkw_bound(x).value


def test_markov_rank_is_not_lost_to_rounding():
    assert markov_rank(BoundInputs(1, 9, 0.1)) == 1
    assert markov_rank(BoundInputs(1, 99, 0.3)) == 30


def test_asymptotic_decreases_in_T_and_approaches_unit_factor():
    vals = [markov_asymptotic(BoundInputs(T, 5000, 0.1)).value for T in (1, 10, 100, 1000, 10**4)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    b = 1e12
    x = BoundInputs(50, 5000, 0.1, b=b)
    bare = 0.9 - math.sqrt(0.09 / 5001) * math.sqrt(2 * math.log(b * 50))
    assert markov_asymptotic(x).value == pytest.approx(bare, abs=1e-10)


def test_hybrid_is_max_and_equals_markov_when_dkw_is_negative():
    x = BoundInputs(10**4, 5, 0.2)
    assert dkw_bound(x).value <= 0
    assert hybrid_bound(x).value == markov_bound(x).value
    out = all_bounds(BoundInputs(100, 8000, 0.1))
    assert out[HYBRID].value == max(out[DKW].value, out[MARKOV].value)


def test_hybrid_dominates_on_random_inputs():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        x = BoundInputs(int(np.exp(rng.uniform(0, np.log(1e4)))), int(np.exp(rng.uniform(0, np.log(1e5)))),
                        float(rng.uniform(0.001, 0.999)), b=float(np.exp(rng.uniform(0.01, 8))))
        h = hybrid_bound(x).value
        assert h >= dkw_bound(x).value and h >= markov_bound(x).value


def test_corrected_level_examples():
    # T=1, n=1: DKW gives 2 * 0.95 - (sqrt(log(2)/2) + 1/3) = 0.978 >= 0.95
    assert corrected_level(0.05, BoundInputs(1, 1, 0.05)) == 0.05
    x = BoundInputs(1000, 1000, 0.1)
    a = corrected_level(0.1, x)
    assert 0 < a < 0.1
    assert hybrid_bound(x.with_alpha(a)).value >= 0.9
    assert hybrid_bound(x.with_alpha(a + 2e-6)).value < 0.9
    assert corrected_level(0.1, BoundInputs(1000, 5, 0.1)) == 0.0


def test_input_validation():
    for args in [(0, 10, 0.1), (10, 0, 0.1), (10, 10, 1.0), (1.5, 10, 0.1)]:
        with pytest.raises(ValueError):
            BoundInputs(*args)
    with pytest.raises(ValueError):
        BoundInputs(10, 10, 0.1, b=1.0)
    with pytest.raises(ValueError):
        corrected_level(0.0, BoundInputs(10, 10, 0.1))
