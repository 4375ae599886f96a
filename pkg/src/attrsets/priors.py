"""Placement priors over attribution-window positions.

A prior pi is a probability vector over the k window positions; pi[r] is
the probability that the true converting click sits at position r (1-based,
position k is the most recent click). The squared 2-norm

    Sigma = sum_i pi[i]^2

measures prior sparsity: 1/Sigma acts as the effective window size, with
Sigma = 1 for a singleton prior (no obfuscation) and Sigma = 1/k for the
uniform prior (maximal obfuscation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = [
    "Prior",
    "prior_sigma",
    "uniform_prior",
    "exponential_prior",
    "singleton_last_prior",
    "linear_prior",
    "custom_prior",
    "prior_by_name",
]

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Prior:
    """Probability vector over window positions 1..k."""

    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise DomainError("prior weights must be a non-empty 1-d vector")
        if np.any(w < 0.0):
            raise DomainError("prior weights must be non-negative")
        if abs(float(w.sum()) - 1.0) > _SUM_TOL:
            raise DomainError(f"prior weights must sum to 1, got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return int(self.weights.size)

    @property
    def sigma(self) -> float:
        return float(np.dot(self.weights, self.weights))

    def weight(self, position: int) -> float:
        """Weight of 1-based window position."""
        if not 1 <= position <= self.k:
            raise DomainError(f"position must lie in [1, {self.k}], got {position}")
        return float(self.weights[position - 1])

    def __repr__(self):
        return f"Prior(k={self.k}, sigma={self.sigma:.6g})"


def prior_sigma(prior: Prior) -> float:
    """Sigma = sum of squared weights = ||pi||_2^2."""
    return prior.sigma


def uniform_prior(k: int) -> Prior:
    return Prior(np.full(k, 1.0 / k))


def exponential_prior(k: int) -> Prior:
    """Weights proportional to (2^-k, ..., 2^-2, 2^-1): last-touch flavored.

    Position k (the most recent click) carries the largest weight. As k
    grows, sigma decreases monotonically toward 1/3.
    """
    w = np.exp2(np.arange(1, k + 1, dtype=np.float64) - k)
    return Prior(w / w.sum())


def singleton_last_prior(k: int) -> Prior:
    """All mass on the last window position (deterministic last-touch)."""
    w = np.zeros(k)
    w[-1] = 1.0
    return Prior(w)


def linear_prior(k: int) -> Prior:
    """Weights proportional to the position index (gentle last-touch decay)."""
    w = np.arange(1, k + 1, dtype=np.float64)
    return Prior(w / w.sum())


def custom_prior(weights) -> Prior:
    return Prior(np.asarray(weights, dtype=np.float64))


_FAMILIES = {
    "uniform": uniform_prior,
    "exponential": exponential_prior,
    "singleton_last": singleton_last_prior,
    "linear": linear_prior,
}


def prior_by_name(name: str, k: int) -> Prior:
    try:
        return _FAMILIES[name](k)
    except KeyError:
        raise DomainError(
            f"unknown prior family {name!r}; choose from {sorted(_FAMILIES)} or use custom_prior"
        ) from None
