"""Affine decompositions of binary-label losses.

Any loss on a binary label can be written as

    loss(h, y) = f1(h) + y * f2(h),
    f1(h) = loss(h, 0),   f2(h) = loss(h, 1) - loss(h, 0),

which is the only structure the unbiased estimator needs. Each
decomposition carries sup-norm bounds F1, F2 on the (clipped) prediction
range and a Lipschitz constant L for f2. Prediction clipping lives inside
f1/f2 so the estimator, the baselines and the evaluation metrics all share
one definition of the bounded loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError

__all__ = ["LossDecomposition", "square_loss", "clipped_log_loss", "loss_by_name"]


@dataclass(frozen=True)
class LossDecomposition:
    name: str
    f1: Callable
    f2: Callable
    f1_prime: Callable
    f2_prime: Callable
    F1: float
    F2: float
    L: float
    clip: float

    def loss(self, h, y):
        """loss(h, y) = f1(h) + y * f2(h); accepts arrays."""
        h = np.asarray(h, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return self.f1(h) + y * self.f2(h)


def square_loss() -> LossDecomposition:
    """loss(h, y) = (y - h)^2, so f1(h) = h^2 and f2(h) = 1 - 2h."""
    return LossDecomposition(
        name="square",
        f1=lambda h: np.square(h),
        f2=lambda h: 1.0 - 2.0 * np.asarray(h, dtype=np.float64),
        f1_prime=lambda h: 2.0 * np.asarray(h, dtype=np.float64),
        f2_prime=lambda h: np.full_like(np.asarray(h, dtype=np.float64), -2.0),
        F1=1.0,
        F2=1.0,
        L=2.0,
        clip=0.0,
    )


def clipped_log_loss(clip: float = 0.01) -> LossDecomposition:
    """Log loss on predictions clamped to [clip, 1 - clip].

    With h_c = clamp(h):  f1(h) = -log(1 - h_c),  f2(h) = -log h_c + log(1 - h_c).
    Derivatives follow the subgradient convention: zero outside the open
    clipping interval, so training remains well defined when predictions
    saturate.
    """
    if not (0.0 < clip < 0.5):
        raise DomainError(f"clip must lie in (0, 0.5), got {clip}")
    lo, hi = clip, 1.0 - clip

    def _c(h):
        return np.clip(np.asarray(h, dtype=np.float64), lo, hi)

    def _interior(h):
        h = np.asarray(h, dtype=np.float64)
        return (h > lo) & (h < hi)

    def f1(h):
        return -np.log1p(-_c(h))

    def f2(h):
        hc = _c(h)
        return -np.log(hc) + np.log1p(-hc)

    def f1_prime(h):
        hc = _c(h)
        return np.where(_interior(h), 1.0 / (1.0 - hc), 0.0)

    def f2_prime(h):
        hc = _c(h)
        return np.where(_interior(h), -1.0 / hc - 1.0 / (1.0 - hc), 0.0)

    return LossDecomposition(
        name="logloss",
        f1=f1,
        f2=f2,
        f1_prime=f1_prime,
        f2_prime=f2_prime,
        F1=abs(math.log(clip)),
        F2=2.0 * abs(math.log(clip)),
        L=2.0 / clip,
        clip=clip,
    )


def loss_by_name(name: str, clip: float = 0.01) -> LossDecomposition:
    if name == "square":
        return square_loss()
    if name == "logloss":
        return clipped_log_loss(clip)
    raise DomainError(f"unknown loss {name!r}; choose 'square' or 'logloss'")
