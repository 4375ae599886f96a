"""Binomial tail probabilities and the estimator's inverse-weighting coefficients.

Everything downstream of the attribution-set estimator reduces to upper
tails of the Binomial distribution,

    B(n, p, k') = P(Bin(n, p) >= k') = sum_{i=k'}^{n} C(n, i) p^i (1-p)^(n-i),

and to the pair of coefficients (beta1, beta0) that translate the expected
value of a window-position evaluation into the label-conditional moment the
learner cannot observe directly:

    E[ f2(h(A_j[i])) * 1{j <= M-k} ] = beta1(j,i) * E[Y f2(h(X))]
                                       + beta0(j,i) * E[f2(h(X))].

With B1 = B(n, p, j+k), B2 = B(n-1, p, j+k-1) and q = (B1 - p*B2) / (1-p):

    beta1(j, i) = pi_i * B1 / p + (B2 - q) * (1 - pi_i)
    beta0(j, i) = q * (1 - pi_i)

The quantity p*B2 is the joint probability that a position at a fixed
offset from the j-th conversion carries a positive label and that at least
j+k conversions occur; q is the complementary (label 0) joint probability
rescaled by 1/(1-p). Both identities are verified exactly by the
enumeration oracle (see attrsets.oracle).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

from .errors import DegenerateCoefficientError, DomainError

__all__ = [
    "BinomialTailParams",
    "BetaCoefficients",
    "binomial_tail",
    "binomial_tail_exact",
    "binomial_pmf",
    "beta_coefficients",
]


@dataclass(frozen=True)
class BinomialTailParams:
    """Arguments of a Binomial upper tail.

    n: number of trials (stream length), >= 1.
    p: success probability (conversion rate), in (0, 1).
    threshold: lower summation bound k', >= 0. Thresholds above n are
        allowed and give a tail of exactly 0.
    """

    n: int
    p: float
    threshold: int

    def __post_init__(self):
        _check_tail_args(self.n, self.p, self.threshold)

    def value(self) -> float:
        return binomial_tail(self.n, self.p, self.threshold)


def _check_tail_args(n, p, threshold):
    if n < 1 or int(n) != n:
        raise DomainError(f"n must be a positive integer, got {n}")
    if not (0.0 < p < 1.0):
        raise DomainError(f"p must lie in (0, 1), got {p}")
    if threshold < 0 or int(threshold) != threshold:
        raise DomainError(f"threshold must be a non-negative integer, got {threshold}")


def _log_pmf(n: int, p: float, i) -> float:
    # log C(n,i) + i log p + (n-i) log(1-p), stable for n up to ~1e6
    return (
        math.lgamma(n + 1)
        - math.lgamma(i + 1)
        - math.lgamma(n - i + 1)
        + i * math.log(p)
        + (n - i) * math.log1p(-p)
    )


@lru_cache(maxsize=65536)
def binomial_tail(n: int, p: float, threshold: int) -> float:
    """Upper tail P(Bin(n, p) >= threshold), accurate to ~1e-14 relative.

    The probability mass terms are evaluated in log space and summed with
    exact (fsum) accumulation over whichever side of the distribution
    carries the smaller mass, so no accuracy is lost to cancellation when
    the requested tail is close to 1.
    """
    _check_tail_args(n, p, threshold)
    if threshold <= 0:
        return 1.0
    if threshold > n:
        return 0.0
    if threshold > n * p:
        # tail itself is the light side: sum it directly
        terms = [math.exp(_log_pmf(n, p, i)) for i in range(n, threshold - 1, -1)]
        return min(1.0, math.fsum(terms))
    # head is the light side: complement it
    head = [math.exp(_log_pmf(n, p, i)) for i in range(threshold - 1, -1, -1)]
    return max(0.0, 1.0 - math.fsum(head))


def binomial_pmf(n: int, p: float, i: int) -> float:
    """P(Bin(n, p) = i)."""
    _check_tail_args(n, p, max(i, 0))
    if i < 0 or i > n:
        return 0.0
    return math.exp(_log_pmf(n, p, i))


def binomial_tail_exact(n: int, p: Fraction, threshold: int) -> Fraction:
    """Exact rational upper tail, for ground-truth comparisons at small n.

    Intended for the enumeration oracle (n <= 30 or so); cost grows with
    the bit length of the rationals, so keep it out of hot paths.
    """
    if not isinstance(p, Fraction):
        raise DomainError("exact tail requires a Fraction probability")
    if n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    if not (0 < p < 1):
        raise DomainError(f"p must lie in (0, 1), got {p}")
    if threshold <= 0:
        return Fraction(1)
    if threshold > n:
        return Fraction(0)
    q = 1 - p
    return sum(
        Fraction(math.comb(n, i)) * p**i * q ** (n - i)
        for i in range(threshold, n + 1)
    )


@dataclass(frozen=True)
class BetaCoefficients:
    """Coefficients of the observable-to-latent moment map at (j, i).

    beta1 multiplies the latent moment E[Y f2(h(X))]; beta0 multiplies the
    plain moment E[f2(h(X))]. beta0 is always non-negative; beta1 is
    strictly positive whenever the window ordinal j is feasible
    (j + k <= n) and the tails have not underflowed.
    """

    beta1: float
    beta0: float
    j: int
    i: int | None = None


def beta_coefficients(
    n: int, p: float, j: int, k: int, pi_i: float, i: int | None = None
) -> BetaCoefficients:
    """Coefficients (beta1, beta0) for conversion ordinal j and window position i.

    Parameters
    ----------
    n, p : stream length and conversion rate.
    j : conversion ordinal (1-based), j >= 1.
    k : attribution-window size, k >= 1.
    pi_i : prior weight of the window position being evaluated, in [0, 1].
    i : optional 1-based window position, recorded on the result for
        diagnostics only (the math depends on the position through pi_i).

    Raises
    ------
    DomainError
        If p, j, k or pi_i lies outside its domain.
    DegenerateCoefficientError
        If beta1 <= 0, which happens when both tails vanish
        (j + k > n, or underflow at extreme n*p). Callers should exclude
        such (j, i) pairs via the low-weight position filter instead of
        clamping.
    """
    if not (0.0 < p < 1.0):
        raise DomainError(f"p must lie in (0, 1), got {p}")
    if j < 1 or k < 1:
        raise DomainError(f"need j >= 1 and k >= 1, got j={j}, k={k}")
    if not (0.0 <= pi_i <= 1.0):
        raise DomainError(f"prior weight must lie in [0, 1], got {pi_i}")
    b1 = binomial_tail(n, p, j + k)
    b2 = binomial_tail(n - 1, p, j + k - 1)
    q = (b1 - p * b2) / (1.0 - p)
    beta1 = pi_i * b1 / p + (b2 - q) * (1.0 - pi_i)
    beta0 = q * (1.0 - pi_i)
    if beta1 <= 0.0:
        raise DegenerateCoefficientError(
            f"beta1={beta1} at (n={n}, p={p}, j={j}, k={k}, pi_i={pi_i}); "
            "window ordinal is outside the feasible range"
        )
    return BetaCoefficients(beta1=beta1, beta0=beta0, j=j, i=i)
