"""Minibatch gradient ERM on the unbiased estimator and on hallucinated labels.

Three training algorithms share one loop:

* "unbiased" minimizes the aggregate attribution-set estimator. Each step
  samples a batch of conversion ordinals without replacement from the
  usable range and a fresh feature batch for the plug-in moments; the
  batch objective is an unbiased estimate of the full-range objective
  because the estimator is affine in both the window evaluations and the
  plug-in moments.
* "random" and "max_prior" train on hallucinated labels (one guessed
  positive per window) with the plain base loss.
* "supervised" trains on the true labels and serves as the reference
  ceiling for diagnostics; it is not part of the attribution protocol.

Seeded runs are bit-reproducible: all randomness flows from the config
seed through one generator, and the optimizer state is deterministic.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, DomainError
from .estimator import EstimatorConfig, affine_form, plugin_split
from .losses import LossDecomposition, loss_by_name
from .models import LogisticModel, MlpModel, _Model
from .priors import Prior
from .simulate import AttributionSet, hallucination_dataset

__all__ = ["TrainConfig", "TrainData", "TrainReport", "train", "evaluate",
           "default_lr_grid", "lr_sweep", "trivial_accuracy"]

ALGORITHMS = ("unbiased", "random", "max_prior", "supervised")


@dataclass
class TrainConfig:
    algorithm: str
    epochs: int = 50
    batch_sets: int = 128
    batch_features: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    loss_name: str = "logloss"
    clip: float = 0.01
    model: str = "logistic"
    hidden: tuple = (64, 64)
    min_weight_filter: float | None = None
    floor_trivial: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.batch_sets < 1 or self.batch_features < 1:
            raise ConfigError("batch sizes must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")

    def make_loss(self) -> LossDecomposition:
        return loss_by_name(self.loss_name, self.clip)


@dataclass
class TrainData:
    """Training-side stream plus labeled test data.

    `labels` are the hidden stream labels; only the supervised reference
    algorithm may read them. The unbiased path needs `sets` and `prior`;
    the baselines need those too (to hallucinate labels).
    """

    features: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray
    sets: list[AttributionSet] | None = None
    prior: Prior | None = None
    labels: np.ndarray | None = None
    name: str = "dataset"


@dataclass
class TrainReport:
    algorithm: str
    seed: int
    epoch_objectives: list = field(default_factory=list)
    epoch_grad_norms: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    final_params: np.ndarray | None = None
    model: _Model | None = field(default=None, repr=False)

    def to_json(self) -> str:
        payload = {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "epoch_objectives": [float(v) for v in self.epoch_objectives],
            "epoch_grad_norms": [float(v) for v in self.epoch_grad_norms],
            "epoch_seconds": [float(v) for v in self.epoch_seconds],
            "diagnostics": self.diagnostics,
            "metrics": self.metrics,
            "final_params": [float(v) for v in self.final_params],
        }
        return json.dumps(payload)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grad):
        return params - self.lr * grad


class _Adam:
    """First/second-moment adaptive steps, decay 0.9/0.999, epsilon 1e-8."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _make_model(config: TrainConfig, dim: int) -> _Model:
    if config.model == "logistic":
        return LogisticModel(dim)
    if config.model == "mlp":
        return MlpModel(dim, hidden=config.hidden, seed=config.seed)
    raise ConfigError(f"unknown model {config.model!r}")


def _make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return _Sgd(config.learning_rate)
    if config.optimizer == "adam":
        return _Adam(config.learning_rate)
    raise ConfigError(f"unknown optimizer {config.optimizer!r}")


def _base_loss_value_grad(model, X, y, loss):
    h = model.predict(X)
    value = float(np.mean(loss.loss(h, y)))
    coeffs = (loss.f1_prime(h) + y * loss.f2_prime(h)) / X.shape[0]
    return value, model.weighted_param_grad(X, coeffs)


def unbiased_value_grad(model, form, features, pool, loss):
    """Objective value and parameter gradient of the affine estimator form.

    The weights are parameter independent, so the gradient is the weighted
    backprop of f2' at the window evaluations plus the pool means of
    f1'/f2' scaled by the plug-in coefficients.
    """
    value = 0.0
    grad = np.zeros_like(model.params)
    if form.weights.size:
        X = features[form.feature_idx]
        h = model.predict(X)
        value += float(np.dot(form.weights, loss.f2(h)))
        grad += model.weighted_param_grad(X, form.weights * loss.f2_prime(h))
    hp = model.predict(pool)
    m = pool.shape[0]
    value += form.c_f1 * float(np.mean(loss.f1(hp)))
    value += form.c_f2 * float(np.mean(loss.f2(hp)))
    grad += model.weighted_param_grad(pool, (form.c_f1 * loss.f1_prime(hp)
                                             + form.c_f2 * loss.f2_prime(hp)) / m)
    return value, grad


def train(data: TrainData, config: TrainConfig) -> TrainReport:
    """Run one training configuration; deterministic given config.seed."""
    loss = config.make_loss()
    rng = np.random.default_rng(config.seed)
    model = _make_model(config, data.features.shape[1])
    optimizer = _make_optimizer(config)
    report = TrainReport(algorithm=config.algorithm, seed=config.seed)
    step = 0

    if config.algorithm == "unbiased":
        if data.sets is None or data.prior is None:
            raise ConfigError("unbiased training needs attribution sets and a prior")
        n = data.features.shape[0]
        est_cfg = EstimatorConfig(
            n=n, k=data.prior.k, prior=data.prior, loss=loss,
            min_weight_filter=config.min_weight_filter,
        )
        plugin = plugin_split(data.features, len(data.sets), "full", loss,
                              feature_batch=config.batch_features,
                              seed=rng.integers(2**63))
        full_form = affine_form(data.sets, est_cfg, plugin.p_hat)
        diag = full_form.diagnostics
        report.diagnostics = diag.record()
        lo, hi = est_cfg.k, diag.m_upper
        usable = np.arange(lo, hi + 1)
        if usable.size == 0:
            raise ConfigError("no usable attribution sets (too few conversions)")
        batch = min(config.batch_sets, usable.size)
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            order = rng.permutation(usable)
            grad_norm = 0.0
            for lo_idx in range(0, usable.size, batch):
                ordinals = order[lo_idx:lo_idx + batch]
                form = affine_form(data.sets, est_cfg, plugin.p_hat, ordinals=ordinals)
                pool = plugin.pool()
                value, grad = unbiased_value_grad(model, form, data.features, pool, loss)
                if not math.isfinite(value):
                    raise DivergenceError(step, value)
                model.params = optimizer.step(model.params, grad)
                grad_norm = float(np.linalg.norm(grad))
                step += 1
            full_value, _ = unbiased_value_grad(
                model, full_form, data.features, data.features, loss)
            report.epoch_objectives.append(full_value)
            report.epoch_grad_norms.append(grad_norm)
            report.epoch_seconds.append(time.perf_counter() - t0)
    else:
        if config.algorithm == "supervised":
            if data.labels is None:
                raise ConfigError("supervised training needs labels")
            X, y = data.features, np.asarray(data.labels, dtype=np.float64)
        else:
            if data.sets is None or data.prior is None:
                raise ConfigError("baseline training needs attribution sets and a prior")
            X, y = hallucination_dataset(data.sets, data.features, data.prior,
                                         config.algorithm, seed=config.seed)
            y = y.astype(np.float64)
        batch = min(config.batch_features, X.shape[0])
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            order = rng.permutation(X.shape[0])
            grad_norm = 0.0
            for lo_idx in range(0, X.shape[0], batch):
                idx = order[lo_idx:lo_idx + batch]
                value, grad = _base_loss_value_grad(model, X[idx], y[idx], loss)
                if not math.isfinite(value):
                    raise DivergenceError(step, value)
                model.params = optimizer.step(model.params, grad)
                grad_norm = float(np.linalg.norm(grad))
                step += 1
            epoch_value, _ = _base_loss_value_grad(model, X, y, loss)
            report.epoch_objectives.append(epoch_value)
            report.epoch_grad_norms.append(grad_norm)
            report.epoch_seconds.append(time.perf_counter() - t0)

    report.final_params = model.params.copy()
    report.model = model
    report.metrics = evaluate(model, data.test_features, data.test_labels, loss)
    if config.floor_trivial:
        floor = trivial_accuracy(data.test_labels)
        if report.metrics["accuracy"] < floor:
            report.metrics["accuracy"] = floor
            report.metrics["floored"] = True
    return report


def trivial_accuracy(labels) -> float:
    """Accuracy of the best constant predictor on these labels."""
    rate = float(np.mean(labels))
    return max(rate, 1.0 - rate)


def evaluate(h, features, labels, loss: LossDecomposition) -> dict:
    """Test metrics with labels in the clear.

    accuracy thresholds predictions at 0.5 (exactly 0.5 predicts 0);
    log_loss is the mean of the decomposition's (clipped) loss; f1 is on
    the positive class, 0 when the denominator vanishes.
    """
    features = np.asarray(features)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DomainError("empty test set")
    pred = np.asarray(h(features) if callable(h) else h)
    hard = (pred > 0.5).astype(np.int8)
    accuracy = float(np.mean(hard == labels))
    mean_loss = float(np.mean(loss.loss(pred, labels)))
    tp = float(np.sum((hard == 1) & (labels == 1)))
    fp = float(np.sum((hard == 1) & (labels == 0)))
    fn = float(np.sum((hard == 0) & (labels == 1)))
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom > 0 else 0.0
    return {"accuracy": accuracy, "log_loss": mean_loss, "f1": f1}


def default_lr_grid() -> np.ndarray:
    """Ten log-spaced learning rates from 1e-6 to 1e-2."""
    return np.logspace(-6, -2, 10)


def lr_sweep(data: TrainData, config: TrainConfig, lrs=None, repetitions: int = 1,
             metric: str = "accuracy") -> dict:
    """Train across a learning-rate grid; report the best mean test metric."""
    from dataclasses import replace

    lrs = default_lr_grid() if lrs is None else np.asarray(lrs, dtype=np.float64)
    rows = []
    for lr in lrs:
        scores = []
        for rep in range(repetitions):
            cfg = replace(config, learning_rate=float(lr), seed=config.seed + rep)
            scores.append(train(data, cfg).metrics[metric])
        rows.append({"lr": float(lr), "mean": float(np.mean(scores)),
                     "std": float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0})
    best = max(rows, key=lambda r: r["mean"]) if metric != "log_loss" else \
        min(rows, key=lambda r: r["mean"])
    return {"rows": rows, "best": best}
