"""Unbiased population-loss estimation from attribution sets.

The pointwise estimator for conversion ordinal j and window position i is

    lhat(h, j, i) = f2(h(A_j[i])) / beta1(j, i)
                    + E[f1(h(X))] / B(n, p, j+k)
                    - beta0(j, i) * E[f2(h(X))] / (beta1(j, i) * B(n, p, j+k)),

whose expectation over stream and adversary, multiplied by the indicator
1{j <= M - k}, equals the population loss exactly. Per-set estimates are a
prior-squared weighted combination over window positions; the aggregate
averages the per-set estimates over the deterministic ordinal range

    j in [k, floor(n p / 2) - k],

truncated by the realized conversion count, and divides by the number of
ordinals in that deterministic range. (Dividing by the real-valued
n p / 2 - 2k + 1 instead is exactly unbiased only when n p / 2 is an
integer; the count keeps unbiasedness for every n and p and agrees with
the real value whenever it is integral.)

Positions with prior weight below the low-weight threshold tau are dropped
and the combination weights renormalized by sigma' = sum of surviving
squared weights; unbiasedness is unaffected because every surviving
position is individually unbiased.

The estimator is affine in the vector of window evaluations
f2(h(A_j[i])), with hypothesis-independent weights. `affine_form`
materializes those weights once so that objective values and parameter
gradients share one code path.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .binomial import beta_coefficients, binomial_tail
from .errors import ConfigError, DomainError, EmptyFilterError
from .losses import LossDecomposition
from .priors import Prior
from .simulate import AttributionSet

__all__ = [
    "PluginEstimates",
    "exact_plugin",
    "plugin_split",
    "EstimatorConfig",
    "EstimatorDiagnostics",
    "AffineForm",
    "affine_form",
    "pointwise_estimate",
    "set_estimate",
    "aggregate_estimate",
    "aggregate_estimate_detailed",
    "AggregateResult",
    "robust_coefficients",
]


# ---------------------------------------------------------------------------
# Plug-in constants: p and the two prediction moments.
# ---------------------------------------------------------------------------


@dataclass
class PluginEstimates:
    """Conversion rate plus estimators of E[f1(h(X))] and E[f2(h(X))].

    Exactly one of (`e_f1_fn`, `e_f2_fn`) or (`pool_fn`, `loss`) is set:
    the former injects analytic values (the enumeration-oracle path), the
    latter computes empirical means over a feature pool. `pool_fn` returns
    the pool rows; in full mode it draws a fresh subsample per call.
    """

    p_hat: float
    e_f1_fn: Callable | None = None
    e_f2_fn: Callable | None = None
    pool_fn: Callable[[], np.ndarray] | None = None
    loss: LossDecomposition | None = None

    def __post_init__(self):
        if not (0.0 < self.p_hat < 1.0):
            raise DomainError(f"p_hat must lie in (0, 1), got {self.p_hat}")

    def pool(self) -> np.ndarray | None:
        return None if self.pool_fn is None else self.pool_fn()

    def e_f1(self, h, pool: np.ndarray | None = None) -> float:
        if self.e_f1_fn is not None:
            return float(self.e_f1_fn(h))
        pool = self.pool() if pool is None else pool
        return float(np.mean(self.loss.f1(h(pool))))

    def e_f2(self, h, pool: np.ndarray | None = None) -> float:
        if self.e_f2_fn is not None:
            return float(self.e_f2_fn(h))
        pool = self.pool() if pool is None else pool
        return float(np.mean(self.loss.f2(h(pool))))


def exact_plugin(p: float, e_f1_fn: Callable, e_f2_fn: Callable) -> PluginEstimates:
    """Analytic constants: true p and closed-form prediction moments."""
    return PluginEstimates(p_hat=p, e_f1_fn=e_f1_fn, e_f2_fn=e_f2_fn)


def plugin_split(
    features: np.ndarray,
    observed_conversions: int,
    mode: str,
    loss: LossDecomposition,
    feature_batch: int = 128,
    seed=0,
) -> PluginEstimates:
    """Empirical plug-in estimates from the observable side of the data.

    mode "split": `observed_conversions` counts conversions in the first
    half of the stream; p_hat and the expectation pool come from that half
    and the estimator should be run on attribution sets of the second half.
    mode "full": `observed_conversions` is the total count (the number of
    attribution sets); p_hat uses the whole stream and each expectation
    evaluation draws a fresh `feature_batch`-row subsample.

    p_hat is clamped to [1/n, 1/2]: zero-conversion pools leave the
    estimator undefined, and rates above 1/2 are outside the supported
    regime.
    """
    features = np.asarray(features)
    n = features.shape[0]
    if n < 2:
        raise DomainError("need at least two stream points")
    if mode == "split":
        half = n // 2
        pool_rows = features[:half]
        p_hat = observed_conversions / half
    elif mode == "full":
        pool_rows = features
        p_hat = observed_conversions / n
    else:
        raise DomainError(f"mode must be 'split' or 'full', got {mode!r}")
    p_hat = min(max(p_hat, 1.0 / n), 0.5)
    rng = np.random.default_rng(seed)

    if mode == "split":
        def pool_fn():
            return pool_rows
    else:
        def pool_fn():
            idx = rng.choice(pool_rows.shape[0], size=min(feature_batch, pool_rows.shape[0]),
                             replace=False)
            return pool_rows[idx]

    return PluginEstimates(p_hat=p_hat, pool_fn=pool_fn, loss=loss)


# ---------------------------------------------------------------------------
# Configuration and the evaluation plan derived from it.
# ---------------------------------------------------------------------------


@dataclass
class EstimatorConfig:
    """Static estimator configuration.

    `prior` is the prior the estimator believes in: the adversary's true
    prior in mode "exact_prior", an estimate of it in mode
    "estimated_prior" (same formulas, biased by the estimation error).
    `min_weight_filter` overrides the low-weight position threshold tau;
    by default tau = exp(-n p_hat) / (filter_delta * p_hat).
    """

    n: int
    k: int
    prior: Prior
    loss: LossDecomposition
    mode: str = "exact_prior"
    min_weight_filter: float | None = None
    filter_delta: float = 0.05

    def __post_init__(self):
        if self.k != self.prior.k:
            raise ConfigError(f"k={self.k} does not match prior support {self.prior.k}")
        if self.n < 1:
            raise ConfigError(f"n must be positive, got {self.n}")
        if self.mode not in ("exact_prior", "estimated_prior"):
            raise ConfigError(f"unknown mode {self.mode!r}")

    def tau(self, p_hat: float) -> float:
        if self.min_weight_filter is not None:
            return self.min_weight_filter
        return math.exp(-self.n * p_hat) / (self.filter_delta * p_hat)

    def positions(self, p_hat: float) -> np.ndarray:
        """Surviving 1-based window positions {i : pi[i] >= tau}."""
        keep = np.flatnonzero(self.prior.weights >= self.tau(p_hat)) + 1
        if keep.size == 0:
            raise EmptyFilterError(
                f"low-weight filter tau={self.tau(p_hat):g} removed every position"
            )
        return keep

    def det_range(self, p_hat: float) -> tuple[int, int]:
        """Deterministic ordinal range [k, floor(n p_hat / 2) - k] and its size."""
        j_hi = math.floor(self.n * p_hat / 2.0) - self.k
        terms = j_hi - self.k + 1
        if terms < 1:
            raise ConfigError(
                f"aggregation range is empty: floor(n p/2) - 2k + 1 = {terms} "
                f"(n={self.n}, p_hat={p_hat}, k={self.k})"
            )
        if self.k > self.n * p_hat / 8.0:
            warnings.warn(
                f"k={self.k} exceeds n*p/8={self.n * p_hat / 8.0:.3g}; "
                "variance guarantees degrade",
                stacklevel=2,
            )
        return j_hi, terms


@dataclass
class EstimatorDiagnostics:
    sigma: float
    sigma_filtered: float
    M: int
    m_upper: int
    truncated: bool
    min_beta1: float

    def record(self) -> dict:
        return {
            "sigma": self.sigma,
            "sigma_filtered": self.sigma_filtered,
            "M": self.M,
            "m_upper": self.m_upper,
            "truncated": self.truncated,
            "min_beta1": self.min_beta1,
        }


# ---------------------------------------------------------------------------
# Core formulas.
# ---------------------------------------------------------------------------


def robust_coefficients(n: int, p: float, j: int, k: int, pi_hat_i: float):
    """Coefficients built from an estimated prior weight.

    Identical formulas to `beta_coefficients`; the only difference is the
    provenance of the weight, so this is a documented alias.
    """
    return beta_coefficients(n, p, j, k, pi_hat_i)


def pointwise_estimate(
    h_value: float,
    config: EstimatorConfig,
    plugin: PluginEstimates,
    j: int,
    i: int,
    e_f1_value: float | None = None,
    e_f2_value: float | None = None,
    h: Callable | None = None,
) -> float:
    """lhat(h, j, i) given the prediction at window position i of set j.

    The plug-in moments can be passed precomputed (`e_f1_value`,
    `e_f2_value`); otherwise they are evaluated through `plugin` for the
    hypothesis `h`.
    """
    if not 1 <= i <= config.k:
        raise DomainError(f"window position must lie in [1, {config.k}], got {i}")
    if i not in config.positions(plugin.p_hat):
        raise EmptyFilterError(f"position {i} is excluded by the low-weight filter")
    if e_f1_value is None:
        e_f1_value = plugin.e_f1(h)
    if e_f2_value is None:
        e_f2_value = plugin.e_f2(h)
    p = plugin.p_hat
    coeff = beta_coefficients(config.n, p, j, config.k, config.prior.weight(i), i=i)
    b_full = binomial_tail(config.n, p, j + config.k)
    f2_val = float(config.loss.f2(h_value))
    return (
        f2_val / coeff.beta1
        + e_f1_value / b_full
        - coeff.beta0 * e_f2_value / (coeff.beta1 * b_full)
    )


def set_estimate(
    h: Callable,
    aset: AttributionSet,
    features: np.ndarray,
    config: EstimatorConfig,
    plugin: PluginEstimates,
    e_f1_value: float | None = None,
    e_f2_value: float | None = None,
) -> float:
    """Prior-squared weighted combination of pointwise estimates over one set."""
    positions = config.positions(plugin.p_hat)
    w = config.prior.weights
    sigma_f = float(np.sum(w[positions - 1] ** 2))
    if e_f1_value is None:
        e_f1_value = plugin.e_f1(h)
    if e_f2_value is None:
        e_f2_value = plugin.e_f2(h)
    values = h(features[aset.indices])
    total = 0.0
    for i in positions:
        total += w[i - 1] ** 2 * pointwise_estimate(
            values[i - 1], config, plugin, aset.j, int(i),
            e_f1_value=e_f1_value, e_f2_value=e_f2_value,
        )
    return total / sigma_f


# ---------------------------------------------------------------------------
# Aggregate estimator as an explicit affine form.
# ---------------------------------------------------------------------------


@dataclass
class AffineForm:
    """theta-independent weights of the aggregate estimator.

    value(h) = weights . f2(h(features[feature_idx])) + c_f1 * E[f1] + c_f2 * E[f2]

    `ordinals` and `positions` record which (j, i) pair produced each term.
    For a subsampled ordinal batch the weights already include the
    batch-to-range scaling, so the form remains an unbiased estimate of the
    full-range aggregate.
    """

    feature_idx: np.ndarray
    weights: np.ndarray
    ordinals: np.ndarray
    positions: np.ndarray
    c_f1: float
    c_f2: float
    diagnostics: EstimatorDiagnostics
    loss: LossDecomposition = field(repr=False, default=None)

    def value(self, h: Callable, features: np.ndarray, e_f1_value: float,
              e_f2_value: float) -> float:
        acc = 0.0
        if self.weights.size:
            hv = h(features[self.feature_idx])
            acc = float(np.dot(self.weights, np.asarray(self.loss.f2(hv))))
        return acc + self.c_f1 * e_f1_value + self.c_f2 * e_f2_value


def affine_form(
    sets: Sequence[AttributionSet],
    config: EstimatorConfig,
    p_hat: float,
    ordinals: Sequence[int] | None = None,
) -> AffineForm:
    """Materialize the aggregate estimator's weights for the given sets.

    `sets` must be ordered by conversion ordinal (set j at sets[j-1]).
    `ordinals` selects a subset of the usable range [k, m_upper]; weights
    are scaled by range/batch so the subset form estimates the full
    aggregate without bias. None takes the whole range.
    """
    k = config.k
    M = len(sets)
    j_hi_det, det_terms = config.det_range(p_hat)
    m_upper = min(j_hi_det, M - k)
    truncated = m_upper < j_hi_det
    positions = config.positions(p_hat)
    w = config.prior.weights
    sigma_f = float(np.sum(w[positions - 1] ** 2))

    if ordinals is None:
        ordinals = range(k, m_upper + 1)
    ordinals = np.asarray(sorted(ordinals), dtype=np.int64)
    if ordinals.size and (ordinals[0] < k or ordinals[-1] > m_upper):
        raise DomainError(
            f"ordinals must lie in [{k}, {m_upper}], got [{ordinals[0]}, {ordinals[-1]}]"
        )
    range_count = m_upper - k + 1
    scale = range_count / ordinals.size if ordinals.size else 0.0

    feat_idx, weights, js, iis = [], [], [], []
    c_f1 = 0.0
    c_f2 = 0.0
    min_beta1 = math.inf
    for j in ordinals:
        aset = sets[j - 1]
        if aset.j != j:
            raise DomainError(f"sets are not ordered by ordinal at j={j}")
        b_full = binomial_tail(config.n, p_hat, int(j) + k)
        c_f1 += 1.0 / b_full
        for i in positions:
            coeff = beta_coefficients(config.n, p_hat, int(j), k, w[i - 1], i=int(i))
            min_beta1 = min(min_beta1, coeff.beta1)
            lead = w[i - 1] ** 2 / (sigma_f * coeff.beta1)
            feat_idx.append(aset.indices[i - 1])
            weights.append(lead)
            js.append(j)
            iis.append(i)
            c_f2 -= lead * coeff.beta0 / b_full

    norm = scale / det_terms if ordinals.size else 0.0
    return AffineForm(
        feature_idx=np.asarray(feat_idx, dtype=np.int64),
        weights=np.asarray(weights) * norm,
        ordinals=np.asarray(js, dtype=np.int64),
        positions=np.asarray(iis, dtype=np.int64),
        c_f1=c_f1 * norm,
        c_f2=c_f2 * norm,
        diagnostics=EstimatorDiagnostics(
            sigma=config.prior.sigma,
            sigma_filtered=sigma_f,
            M=M,
            m_upper=m_upper,
            truncated=truncated,
            min_beta1=min_beta1 if min_beta1 < math.inf else float("nan"),
        ),
        loss=config.loss,
    )


@dataclass
class AggregateResult:
    value: float
    diagnostics: EstimatorDiagnostics


def aggregate_estimate_detailed(
    h: Callable,
    sets: Sequence[AttributionSet],
    features: np.ndarray,
    config: EstimatorConfig,
    plugin: PluginEstimates,
) -> AggregateResult:
    """Aggregate estimate plus its per-evaluation diagnostics record."""
    form = affine_form(sets, config, plugin.p_hat)
    if form.weights.size == 0:
        # too few conversions: nothing usable, flagged as truncated
        return AggregateResult(0.0, form.diagnostics)
    pool = plugin.pool()
    e1 = plugin.e_f1(h, pool=pool)
    e2 = plugin.e_f2(h, pool=pool)
    return AggregateResult(form.value(h, features, e1, e2), form.diagnostics)


def aggregate_estimate(
    h: Callable,
    sets: Sequence[AttributionSet],
    features: np.ndarray,
    config: EstimatorConfig,
    plugin: PluginEstimates,
) -> float:
    return aggregate_estimate_detailed(h, sets, features, config, plugin).value
