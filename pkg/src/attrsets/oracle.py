"""Exact verification of the estimator by brute-force enumeration.

For small instances (n <= 14, discrete feature domain of at most 4 points
with explicit conditional laws) every expectation over the joint measure
(label strings x adversary placements x features) can be computed exactly:

* label strings are enumerated (2^n of them);
* the placement draw enters every estimator expression linearly, so the
  expectation over placements is taken analytically per conversion;
* features are conditionally independent given labels, so per-position
  feature expectations reduce to the two conditional laws.

Crucially the enumeration only ever computes *measure-side* quantities
(string probabilities, mixture weights over the feature domain); all
estimator values are obtained by calling the production estimator code on
domain points. A bug in the estimator therefore cannot cancel against a
matching bug here: the target, the exact population loss, is computed from
the instance tables alone.

The module also verifies the combinatorial identity behind the estimator's
coefficients in exact rational arithmetic: the probability that the label
at a fixed offset t from the j-th conversion is 1 while at least j+k
conversions occur equals p * B(n-1, p, j+k-1), independent of t.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np

from .binomial import binomial_tail_exact
from .errors import DomainError
from .estimator import (
    EstimatorConfig,
    PluginEstimates,
    aggregate_estimate,
    exact_plugin,
    pointwise_estimate,
)
from .losses import LossDecomposition, loss_by_name
from .priors import Prior, prior_by_name
from .simulate import LabeledStream, generate_attribution_sets

__all__ = [
    "EnumerationInstance",
    "MAX_ENUM_N",
    "exact_population_loss",
    "exact_estimator_expectation",
    "verify_neighbor_label_identity",
    "neighbor_feature_law",
    "verify_conditional_law",
    "monte_carlo_aggregate",
    "sample_instance_stream",
    "fixtures_dir",
    "load_fixture_grid",
]

MAX_ENUM_N = 14

FIXTURES_ENV = "ATTRSETS_FIXTURES"


@dataclass(frozen=True)
class EnumerationInstance:
    """A fully tabulated task small enough to enumerate.

    Features are represented by their domain index; a "feature vector" in
    simulator output is the single-column array of indices, and the
    hypothesis is a table over the domain.
    """

    n: int
    p: float
    k: int
    prior: Prior
    domain: np.ndarray       # display values of the feature points
    law_pos: np.ndarray      # P(X = x | Y = 1)
    law_neg: np.ndarray      # P(X = x | Y = 0)
    hypothesis: np.ndarray   # h(x) per domain point
    loss: LossDecomposition
    name: str = ""

    def __post_init__(self):
        if self.n > MAX_ENUM_N:
            raise DomainError(f"enumeration supports n <= {MAX_ENUM_N}, got {self.n}")
        if not (0.0 < self.p < 1.0):
            raise DomainError(f"p must lie in (0, 1), got {self.p}")
        for name in ("law_pos", "law_neg"):
            law = np.asarray(getattr(self, name), dtype=np.float64)
            if law.ndim != 1 or law.size > 4 or np.any(law < 0) or abs(law.sum() - 1.0) > 1e-12:
                raise DomainError(f"{name} must be a distribution over at most 4 points")
            object.__setattr__(self, name, law)
        object.__setattr__(self, "domain", np.asarray(self.domain, dtype=np.float64))
        object.__setattr__(self, "hypothesis", np.asarray(self.hypothesis, dtype=np.float64))
        if not (self.domain.size == self.law_pos.size == self.law_neg.size
                == self.hypothesis.size):
            raise DomainError("domain, laws and hypothesis table must have equal size")

    @property
    def marginal(self) -> np.ndarray:
        """P(X = x) under the instance."""
        return self.p * self.law_pos + (1.0 - self.p) * self.law_neg

    def h_fn(self, X) -> np.ndarray:
        """Hypothesis as a callable over index-encoded feature rows."""
        X = np.atleast_2d(np.asarray(X))
        return self.hypothesis[X[:, 0].astype(np.int64)]

    def config(self, **overrides) -> EstimatorConfig:
        # tau = 0: enumeration instances sit far below the n*p regime where
        # the default low-weight threshold is meaningful, and zero-weight
        # positions carry zero combination weight anyway.
        cfg = EstimatorConfig(n=self.n, k=self.k, prior=self.prior, loss=self.loss,
                              min_weight_filter=0.0)
        return replace(cfg, **overrides) if overrides else cfg

    def analytic_plugin(self) -> PluginEstimates:
        """True p with closed-form prediction moments from the tables."""
        px = self.marginal

        def e1(h):
            return float(np.dot(px, self.loss.f1(self.h_fn(_domain_rows(self)))))

        def e2(h):
            return float(np.dot(px, self.loss.f2(self.h_fn(_domain_rows(self)))))

        return exact_plugin(self.p, e1, e2)


def _domain_rows(inst: EnumerationInstance) -> np.ndarray:
    return np.arange(inst.domain.size, dtype=np.int64)[:, None]


# ---------------------------------------------------------------------------
# Label-string enumeration machinery.
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _string_space(n: int):
    """All 2^n label strings: bit matrix and per-string conversion count."""
    codes = np.arange(1 << n, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(np.int8)
    return bits, bits.sum(axis=1)


def _string_probs(n: int, p: float) -> np.ndarray:
    _, M = _string_space(n)
    return np.exp(M * math.log(p) + (n - M) * math.log1p(-p))


def _conversion_position(bits: np.ndarray, j: int) -> np.ndarray:
    """0-based stream index of the j-th conversion per string (0 where M < j)."""
    ordinal = bits.cumsum(axis=1) * bits
    return np.argmax(ordinal == j, axis=1)


def _placement_mixture(inst: EnumerationInstance, j: int, i: int):
    """Enumerated weights (A1, A0) of the window evaluation at (j, i).

    E[g(X at window slot i of set j) * 1{j <= M-k}] =
        A1 * E[g(X) | Y=1] + A0 * E[g(X) | Y=0]
    for any g, with A1 + A0 = P(j <= M-k). The prior used here is the
    instance's true prior (the adversary's), regardless of what the
    estimator believes.
    """
    n, k = inst.n, inst.k
    bits, M = _string_space(n)
    probs = _string_probs(n, inst.p)
    event = M >= j + k
    conv = _conversion_position(bits, j)
    rows = np.flatnonzero(event)
    a1 = a0 = 0.0
    for r in range(1, k + 1):
        t = np.clip(conv[rows] + i - r, 0, n - 1)
        y = bits[rows, t]
        w = inst.prior.weights[r - 1] * probs[rows]
        a1 += float(w[y == 1].sum())
        a0 += float(w[y == 0].sum())
    return a1, a0, float(probs[rows].sum())


def exact_population_loss(inst: EnumerationInstance) -> float:
    """L(h) = sum_y sum_x P(y) P(x|y) loss(h(x), y), straight from the tables."""
    h = inst.hypothesis
    pos = float(np.dot(inst.law_pos, inst.loss.loss(h, 1.0)))
    neg = float(np.dot(inst.law_neg, inst.loss.loss(h, 0.0)))
    return inst.p * pos + (1.0 - inst.p) * neg


def _pointwise_expectation(inst, config, plugin, j, i) -> float:
    a1, a0, _ = _placement_mixture(inst, j, i)
    weights = a1 * inst.law_pos + a0 * inst.law_neg
    e1 = plugin.e_f1(inst.h_fn)
    e2 = plugin.e_f2(inst.h_fn)
    return float(sum(
        weights[x] * pointwise_estimate(
            inst.hypothesis[x], config, plugin, j, i, e_f1_value=e1, e_f2_value=e2
        )
        for x in range(inst.domain.size)
    ))


def _pointwise_expectation_full_plugin(inst, config, j, i) -> float:
    """Full-mode plug-in: p and the moments re-estimated from the same stream."""
    n, k = inst.n, inst.k
    bits, M = _string_space(n)
    probs = _string_probs(n, inst.p)
    conv = _conversion_position(bits, j)
    h_dom = inst.h_fn(_domain_rows(inst))
    f1_pos = float(np.dot(inst.law_pos, inst.loss.f1(h_dom)))
    f1_neg = float(np.dot(inst.law_neg, inst.loss.f1(h_dom)))
    f2_pos = float(np.dot(inst.law_pos, inst.loss.f2(h_dom)))
    f2_neg = float(np.dot(inst.law_neg, inst.loss.f2(h_dom)))
    total = 0.0
    for m in range(j + k, n + 1):
        rows = np.flatnonzero(M == m)
        if rows.size == 0:
            continue
        a1 = a0 = 0.0
        for r in range(1, k + 1):
            t = np.clip(conv[rows] + i - r, 0, n - 1)
            y = bits[rows, t]
            w = inst.prior.weights[r - 1] * probs[rows]
            a1 += float(w[y == 1].sum())
            a0 += float(w[y == 0].sum())
        frac = m / n
        p_hat = min(max(frac, 1.0 / n), 0.5)
        plugin = PluginEstimates(p_hat=p_hat,
                                 e_f1_fn=lambda h: 0.0, e_f2_fn=lambda h: 0.0)
        e1 = frac * f1_pos + (1.0 - frac) * f1_neg
        e2 = frac * f2_pos + (1.0 - frac) * f2_neg
        weights = a1 * inst.law_pos + a0 * inst.law_neg
        total += float(sum(
            weights[x] * pointwise_estimate(
                inst.hypothesis[x], config, plugin, j, i, e_f1_value=e1, e_f2_value=e2
            )
            for x in range(inst.domain.size)
        ))
    return total


def exact_estimator_expectation(
    inst: EnumerationInstance,
    j: int | None = None,
    i: int | None = None,
    aggregate: bool = False,
    config: EstimatorConfig | None = None,
    plugin_mode: str = "analytic",
    j_range: tuple[int, int] | None = None,
) -> float:
    """Exact expectation of the indicator-weighted estimator under the instance.

    With (j, i): E[lhat(h, j, i) * 1{j <= M-k}].
    With j only: the per-set prior-squared combination at ordinal j.
    With aggregate=True: the full aggregate (deterministic range from the
    configuration, truncation by the realized conversion count included).
    `j_range=(lo, hi)` replaces the deterministic range with an explicit
    one (count-normalized), used to probe ordinals beyond the algorithm's
    own cap. `config` substitutes the estimator's configuration, e.g. one
    built around an estimated prior; the adversary side always uses the
    instance's true prior. plugin_mode "analytic" injects the true
    constants; "full" re-estimates them from the same stream, exposing the
    plug-in bias.
    """
    config = inst.config() if config is None else config
    if plugin_mode not in ("analytic", "full"):
        raise DomainError(f"unknown plugin_mode {plugin_mode!r}")
    plugin = inst.analytic_plugin() if plugin_mode == "analytic" else None

    def pointwise(jj, ii):
        if plugin_mode == "analytic":
            return _pointwise_expectation(inst, config, plugin, jj, ii)
        return _pointwise_expectation_full_plugin(inst, config, jj, ii)

    def per_set(jj):
        positions = config.positions(inst.p if plugin is None else plugin.p_hat)
        w = config.prior.weights
        sigma_f = float(np.sum(w[positions - 1] ** 2))
        return sum(w[ii - 1] ** 2 * pointwise(jj, int(ii)) for ii in positions) / sigma_f

    if aggregate or j_range is not None:
        if j_range is None:
            j_hi, terms = config.det_range(inst.p if plugin is None else plugin.p_hat)
            lo = config.k
        else:
            lo, j_hi = j_range
            terms = j_hi - lo + 1
            if terms < 1 or lo < config.k or j_hi > inst.n - config.k:
                raise DomainError(f"invalid explicit ordinal range {j_range}")
        return sum(per_set(jj) for jj in range(lo, j_hi + 1)) / terms
    if j is None:
        raise DomainError("need j, or aggregate=True")
    if i is not None:
        return pointwise(j, i)
    return per_set(j)


# ---------------------------------------------------------------------------
# Exact combinatorial identities.
# ---------------------------------------------------------------------------


def verify_neighbor_label_identity(
    n: int, p: Fraction, j: int, k: int, t: int, sign: int = -1
) -> tuple[Fraction, Fraction]:
    """Enumerated P(Y at offset sign*t from the j-th conversion = 1, M >= j+k)
    against the closed form p * B(n-1, p, j+k-1), in exact rationals.

    The identity holds for strict offsets 1 <= t <= j - 1 (and t <= k in
    the forward case). At t = 0 the position is the conversion itself and
    the joint probability is the full indicator mass B(n, p, j+k) instead;
    see `conversion_position_mass`.
    """
    if t < 1 or t + 1 > j:
        raise DomainError("need 1 <= t <= j - 1")
    if sign not in (-1, 1):
        raise DomainError("sign must be -1 or +1")
    if sign == 1 and t > k:
        raise DomainError("forward offsets require t <= k")
    if not isinstance(p, Fraction):
        raise DomainError("exact verification requires a rational p")
    q = 1 - p
    pow_p = [p**m * q ** (n - m) for m in range(n + 1)]
    enumerated = Fraction(0)
    for code in range(1 << n):
        bits = [(code >> b) & 1 for b in range(n)]
        m = sum(bits)
        if m < j + k:
            continue
        ones = [idx for idx, y in enumerate(bits) if y == 1]
        pos = ones[j - 1] + sign * t
        if 0 <= pos < n and bits[pos] == 1:
            enumerated += pow_p[m]
    closed = p * binomial_tail_exact(n - 1, p, j + k - 1)
    return enumerated, closed


def conversion_position_mass(n: int, p: Fraction, j: int, k: int) -> tuple[Fraction, Fraction]:
    """Enumerated P(Y at the j-th conversion = 1, M >= j+k) against B(n, p, j+k).

    This is the t = 0 companion of `verify_neighbor_label_identity`: the
    label at the conversion position is 1 by construction, so the joint
    probability is the indicator mass itself.
    """
    if not isinstance(p, Fraction):
        raise DomainError("exact verification requires a rational p")
    q = 1 - p
    enumerated = Fraction(0)
    for code in range(1 << n):
        bits = [(code >> b) & 1 for b in range(n)]
        m = sum(bits)
        if m >= j + k:
            enumerated += p**m * q ** (n - m)
    return enumerated, binomial_tail_exact(n, p, j + k)


def neighbor_feature_law(
    inst: EnumerationInstance, j: int, t: int, sign: int = -1
) -> tuple[np.ndarray, np.ndarray]:
    """Enumerated joint law P(X at offset sign*t from conversion j = x, M >= j+k)
    against its two-component closed form

        P(x|Y=1) * p * B(n-1,p,j+k-1) + P(x|Y=0) * (B(n,p,j+k) - p * B(n-1,p,j+k-1)).
    """
    from .binomial import binomial_tail

    if t < 1 or t + 1 > j or (sign == 1 and t > inst.k):
        raise DomainError("closed form needs 1 <= t <= j-1 (and t <= k forward)")
    n, k = inst.n, inst.k
    bits, M = _string_space(n)
    probs = _string_probs(n, inst.p)
    conv = _conversion_position(bits, j)
    rows = np.flatnonzero(M >= j + k)
    pos = conv[rows] + sign * t
    valid = (pos >= 0) & (pos < n)
    rows, pos = rows[valid], pos[valid]
    y = bits[rows, pos]
    a1 = float(probs[rows[y == 1]].sum())
    a0 = float(probs[rows[y == 0]].sum())
    enumerated = a1 * inst.law_pos + a0 * inst.law_neg
    b1 = binomial_tail(n, inst.p, j + k)
    b2 = binomial_tail(n - 1, inst.p, j + k - 1)
    closed = inst.law_pos * inst.p * b2 + inst.law_neg * (b1 - inst.p * b2)
    return enumerated, closed


def verify_conditional_law(
    inst: EnumerationInstance, j: int, t: int, label: int, sign: int = -1
) -> tuple[np.ndarray | None, float, float | None]:
    """Enumerated conditional feature law at offset sign*t from conversion j.

    Returns (law, event_probability, tv_distance) where the law conditions
    on {Y at the offset position = label, M >= j+k} and tv_distance is the
    total-variation distance to the instance's conditional law for that
    label. A zero-probability conditioning event is reported as
    (None, 0.0, None) rather than raised.
    """
    n, k = inst.n, inst.k
    bits, M = _string_space(n)
    probs = _string_probs(n, inst.p)
    conv = _conversion_position(bits, j)
    rows = np.flatnonzero(M >= j + k)
    pos = conv[rows] + sign * t
    valid = (pos >= 0) & (pos < n)
    rows, pos = rows[valid], pos[valid]
    match = bits[rows, pos] == label
    event_prob = float(probs[rows[match]].sum())
    if event_prob == 0.0:
        return None, 0.0, None
    # features are conditionally independent of the labels' arrangement, so
    # each admissible string contributes its weight times the conditional law
    component = inst.law_pos if label == 1 else inst.law_neg
    law = (probs[rows[match]].sum() * component) / event_prob
    target = inst.law_pos if label == 1 else inst.law_neg
    tv = 0.5 * float(np.abs(law - target).sum())
    return law, event_prob, tv


# ---------------------------------------------------------------------------
# Simulator-driven Monte Carlo.
# ---------------------------------------------------------------------------


def sample_instance_stream(inst: EnumerationInstance, rng) -> LabeledStream:
    """Draw one stream from the instance; features are domain indices."""
    labels = (rng.random(inst.n) < inst.p).astype(np.int8)
    u = rng.random(inst.n)
    pos_idx = np.searchsorted(np.cumsum(inst.law_pos), u, side="right")
    neg_idx = np.searchsorted(np.cumsum(inst.law_neg), u, side="right")
    feats = np.where(labels == 1, pos_idx, neg_idx)
    feats = np.minimum(feats, inst.domain.size - 1)
    return LabeledStream(feats[:, None].astype(np.float64), labels,
                         np.flatnonzero(labels == 1))


def monte_carlo_aggregate(
    inst: EnumerationInstance, reps: int, seed, config: EstimatorConfig | None = None
) -> np.ndarray:
    """Replicate the full pipeline: sample stream, run the adversary,
    evaluate the production aggregate with analytic plug-in constants.
    Returns the vector of replicate values (truncated replicates give 0,
    exactly as the production estimator does)."""
    config = inst.config() if config is None else config
    plugin = inst.analytic_plugin()
    rng = np.random.default_rng(seed)
    out = np.empty(reps)
    for rep in range(reps):
        stream = sample_instance_stream(inst, rng)
        sets = generate_attribution_sets(stream, inst.prior, rng.integers(2**63))
        out[rep] = aggregate_estimate(inst.h_fn, sets, stream.features, config, plugin)
    return out


# ---------------------------------------------------------------------------
# Fixture grid.
# ---------------------------------------------------------------------------


def fixtures_dir() -> Path:
    override = os.environ.get(FIXTURES_ENV)
    if override:
        return Path(override)
    return Path(__file__).parent / "fixtures"


def load_fixture_grid(path=None) -> list[EnumerationInstance]:
    """Instantiate the verification grid from its checked-in data file.

    Population-loss values are always recomputed from the tables; the file
    stores only instance definitions, never expected results.
    """
    path = Path(path) if path is not None else fixtures_dir() / "oracle_grid.json"
    spec = json.loads(Path(path).read_text())
    domain = np.asarray(spec["domain"], dtype=np.float64)
    law_pos = np.asarray(spec["conditional_laws"]["positive"])
    law_neg = np.asarray(spec["conditional_laws"]["negative"])
    instances = []
    for n in spec["grid"]["n"]:
        for p in spec["grid"]["p"]:
            for k in spec["grid"]["k"]:
                for prior_name in spec["priors"]:
                    prior = prior_by_name(prior_name, k)
                    for loss_name in spec["losses"]:
                        for hyp_name, table in spec["hypotheses"].items():
                            instances.append(EnumerationInstance(
                                n=n, p=p, k=k, prior=prior, domain=domain,
                                law_pos=law_pos, law_neg=law_neg,
                                hypothesis=np.asarray(table, dtype=np.float64),
                                loss=loss_by_name(loss_name),
                                name=(f"n{n}-p{p}-k{k}-{prior_name}-"
                                      f"{loss_name}-{hyp_name}"),
                            ))
    return instances
