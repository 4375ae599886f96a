import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import betainc

from attrsets.binomial import (
    BetaCoefficients,
    BinomialTailParams,
    beta_coefficients,
    binomial_pmf,
    binomial_tail,
    binomial_tail_exact,
)
from attrsets.errors import DegenerateCoefficientError, DomainError


def test_full_mass_tail():
    assert binomial_tail(5, 0.3, 0) == 1.0


def test_single_top_term():
    assert binomial_tail(5, 0.3, 5) == pytest.approx(0.3**5, rel=1e-14)


def test_threshold_above_n_is_zero():
    assert binomial_tail(5, 0.3, 6) == 0.0
    assert binomial_tail(5, 0.3, 100) == 0.0


def test_derived_value_against_direct_pmf_sum():
    # 13-term pmf summed in float64, cross-checked against the
    # regularized-incomplete-beta identity
    n, p, k = 12, 0.25, 4
    direct = math.fsum(
        math.comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(k, n + 1)
    )
    assert binomial_tail(n, p, k) == pytest.approx(direct, rel=1e-13)
    assert binomial_tail(n, p, k) == pytest.approx(betainc(k, n - k + 1, p), rel=1e-12)


@pytest.mark.parametrize("n,p", [(6, 0.3), (17, 0.5), (30, 0.2), (30, 0.49)])
def test_relative_error_against_exact_rationals(n, p):
    pf = Fraction(p).limit_denominator(100)
    for threshold in range(0, n + 2):
        exact = binomial_tail_exact(n, pf, threshold)
        got = binomial_tail(n, float(pf), threshold)
        if exact == 0:
            assert got == 0.0
        else:
            assert abs(got - float(exact)) <= 1e-12 * float(exact)


@given(
    n=st.integers(min_value=1, max_value=200),
    p=st.floats(min_value=0.01, max_value=0.99),
    threshold=st.integers(min_value=0, max_value=200),
)
@settings(max_examples=150, deadline=None)
def test_pmf_consistency(n, p, threshold):
    # tail(t) - tail(t+1) = pmf(t)
    if threshold > n:
        return
    diff = binomial_tail(n, p, threshold) - binomial_tail(n, p, threshold + 1)
    assert diff == pytest.approx(binomial_pmf(n, p, threshold), rel=1e-9, abs=1e-13)


def test_tail_monotone_in_threshold():
    vals = [binomial_tail(40, 0.37, t) for t in range(0, 42)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert all(0.0 <= v <= 1.0 for v in vals)


def test_large_n_stability():
    # far tails must neither overflow nor go negative at n = 1e6
    assert 0.0 <= binomial_tail(10**6, 0.001, 1200) <= 1.0
    assert binomial_tail(10**6, 0.5, 1) == pytest.approx(1.0)
    mid = binomial_tail(10**6, 0.5, 500000)
    assert 0.49 < mid < 0.52


def test_domain_errors():
    with pytest.raises(DomainError):
        binomial_tail(0, 0.5, 1)
    with pytest.raises(DomainError):
        binomial_tail(5, 0.0, 1)
    with pytest.raises(DomainError):
        binomial_tail(5, 1.0, 1)
    with pytest.raises(DomainError):
        BinomialTailParams(5, 1.5, 1)


def test_params_object_matches_function():
    params = BinomialTailParams(9, 0.4, 3)
    assert params.value() == binomial_tail(9, 0.4, 3)


# ---------------------------------------------------------------------------
# Coefficients.
# ---------------------------------------------------------------------------


def test_singleton_weight_collapses_background():
    # pi_i = 1 removes the background term entirely
    for n, p, j, k in [(50, 0.3, 5, 3), (200, 0.1, 10, 4), (30, 0.5, 4, 2)]:
        coeff = beta_coefficients(n, p, j, k, 1.0)
        assert coeff.beta0 == 0.0
        assert coeff.beta1 == pytest.approx(binomial_tail(n, p, j + k) / p, rel=1e-12)


def test_hand_evaluated_pair():
    # n=10, p=0.5, j=2, k=2, pi_i=0.5: both tails evaluated from the exact
    # rational pmf, then combined by hand
    b1 = binomial_tail_exact(10, Fraction(1, 2), 4)
    b2 = binomial_tail_exact(9, Fraction(1, 2), 3)
    q = (b1 - Fraction(1, 2) * b2) / Fraction(1, 2)
    expect_beta1 = Fraction(1, 2) * b1 / Fraction(1, 2) + (b2 - q) * Fraction(1, 2)
    expect_beta0 = q * Fraction(1, 2)
    coeff = beta_coefficients(10, 0.5, 2, 2, 0.5)
    assert coeff.beta1 == pytest.approx(float(expect_beta1), rel=1e-12)
    assert coeff.beta0 == pytest.approx(float(expect_beta0), rel=1e-12)


def test_beta0_nonnegative_everywhere():
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(200):
        n = int(rng.integers(2, 400))
        p = float(rng.uniform(0.01, 0.5))
        k = int(rng.integers(1, 6))
        j = int(rng.integers(1, max(2, n - k)))
        pi_i = float(rng.uniform(0, 1))
        if j + k > n:
            continue
        try:
            coeff = beta_coefficients(n, p, j, k, pi_i)
        except DegenerateCoefficientError:
            # far-tail underflow at extreme j relative to n*p; legitimate
            continue
        checked += 1
        assert coeff.beta0 >= 0.0
    assert checked > 100


def test_concentration_regime_bounds():
    # for p <= 1/2, k <= np/8, k <= j <= np/2 - k and np large enough
    # relative to the smallest prior weight: beta1 >= pi_i / (2p) and
    # 0 <= beta0 <= 1
    for p in (0.05, 0.25, 0.5):
        for pi_i in (0.05, 0.3, 1.0):
            np_min = 8.0 * (math.log(1.0 / pi_i) + math.log(1.0 / p))
            n = max(int(np_min / p) + 1, 64)
            k = max(1, int(n * p / 8))
            j_lo, j_hi = k, int(n * p / 2) - k
            assert j_lo <= j_hi
            for j in {j_lo, (j_lo + j_hi) // 2, j_hi}:
                coeff = beta_coefficients(n, p, j, k, pi_i)
                assert coeff.beta1 >= pi_i / (2.0 * p)
                assert 0.0 <= coeff.beta0 <= 1.0


def test_asymptotic_limits():
    # large np with j + k <= np/2: beta1 -> pi_i/p, beta0 -> 1 - pi_i
    n, p, k = 4000, 0.4, 5
    j = 100
    coeff = beta_coefficients(n, p, j, k, 0.3)
    assert coeff.beta1 == pytest.approx(0.3 / p, rel=1e-8)
    assert coeff.beta0 == pytest.approx(0.7, rel=1e-8)


def test_degenerate_out_of_range():
    # j + k > n: both tails vanish and the coefficient degenerates
    with pytest.raises(DegenerateCoefficientError):
        beta_coefficients(10, 0.5, 10, 2, 0.5)


def test_coefficient_domain_errors():
    with pytest.raises(DomainError):
        beta_coefficients(10, 1.2, 2, 2, 0.5)
    with pytest.raises(DomainError):
        beta_coefficients(10, 0.5, 0, 2, 0.5)
    with pytest.raises(DomainError):
        beta_coefficients(10, 0.5, 2, 2, 1.5)


def test_coefficients_record_indices():
    coeff = beta_coefficients(20, 0.3, 4, 2, 0.5, i=2)
    assert isinstance(coeff, BetaCoefficients)
    assert (coeff.j, coeff.i) == (4, 2)
