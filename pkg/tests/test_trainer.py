import json
import math
import warnings

import numpy as np
import pytest

from attrsets.errors import ConfigError, DivergenceError, DomainError
from attrsets.estimator import EstimatorConfig, affine_form, plugin_split
from attrsets.losses import clipped_log_loss, loss_by_name, square_loss
from attrsets.models import LogisticModel
from attrsets.priors import uniform_prior
from attrsets.simulate import SyntheticTask, generate_attribution_sets, sample_stream
from attrsets.train import (
    TrainConfig,
    TrainData,
    default_lr_grid,
    evaluate,
    lr_sweep,
    train,
    trivial_accuracy,
    unbiased_value_grad,
)

warnings.filterwarnings("ignore", message="k=.*exceeds")


@pytest.fixture(scope="module")
def small_problem():
    task = SyntheticTask.default(positive_rate=0.25, dim=4, separation=3.0, seed=0)
    train_s = sample_stream(task, 3000, seed=1)
    test_s = sample_stream(task, 1500, seed=2)
    prior = uniform_prior(2)
    sets = generate_attribution_sets(train_s, prior, seed=3)
    return TrainData(
        features=train_s.features, sets=sets, prior=prior, labels=train_s.labels,
        test_features=test_s.features, test_labels=test_s.labels,
    )


def test_seeded_runs_bit_reproducible(small_problem):
    cfg = TrainConfig(algorithm="unbiased", epochs=3, learning_rate=1e-2, seed=7)
    a = train(small_problem, cfg)
    b = train(small_problem, cfg)
    assert np.array_equal(a.final_params, b.final_params)
    assert a.epoch_objectives == b.epoch_objectives
    c = train(small_problem, TrainConfig(algorithm="unbiased", epochs=3,
                                         learning_rate=1e-2, seed=8))
    assert not np.array_equal(a.final_params, c.final_params)


def test_single_sgd_step_descends(small_problem):
    # one tiny step moves parameters along the negative gradient
    data = small_problem
    loss = loss_by_name("logloss", 0.01)
    cfg = EstimatorConfig(n=data.features.shape[0], k=2, prior=data.prior, loss=loss)
    plugin = plugin_split(data.features, len(data.sets), "full", loss, seed=0)
    model = LogisticModel(4)
    form = affine_form(data.sets, cfg, plugin.p_hat)
    _, grad = unbiased_value_grad(model, form, data.features, data.features, loss)

    report = train(data, TrainConfig(algorithm="unbiased", epochs=1,
                                     learning_rate=1e-9, optimizer="sgd",
                                     batch_sets=10_000, seed=0))
    step = report.final_params - LogisticModel(4).params
    assert float(np.dot(step, grad)) < 0.0


def test_minibatch_gradient_unbiased_for_full_gradient(small_problem):
    # average many minibatch gradients at fixed theta against the full
    # gradient with full-pool plug-in moments
    data = small_problem
    loss = loss_by_name("logloss", 0.01)
    n = data.features.shape[0]
    cfg = EstimatorConfig(n=n, k=2, prior=data.prior, loss=loss)
    plugin = plugin_split(data.features, len(data.sets), "full", loss,
                          feature_batch=64, seed=5)
    rng = np.random.default_rng(6)
    model = LogisticModel(4, params=rng.normal(scale=0.3, size=5))
    full_form = affine_form(data.sets, cfg, plugin.p_hat)
    _, full_grad = unbiased_value_grad(model, full_form, data.features,
                                       data.features, loss)
    j_hi, _ = cfg.det_range(plugin.p_hat)
    usable = np.arange(2, min(j_hi, len(data.sets) - 2) + 1)
    samples = np.empty((3000, 5))
    for s in range(samples.shape[0]):
        batch = rng.choice(usable, size=64, replace=False)
        form = affine_form(data.sets, cfg, plugin.p_hat, ordinals=batch)
        _, g = unbiased_value_grad(model, form, data.features, plugin.pool(), loss)
        samples[s] = g
    se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    assert np.all(np.abs(samples.mean(axis=0) - full_grad) <= 3.5 * se + 1e-12)


def test_unbiased_learns_separable_task(small_problem):
    report = train(small_problem, TrainConfig(algorithm="unbiased", epochs=40,
                                              learning_rate=1e-2, seed=0))
    assert report.metrics["accuracy"] > trivial_accuracy(small_problem.test_labels)
    assert report.diagnostics["M"] == len(small_problem.sets)
    assert not report.diagnostics["truncated"]


def test_baselines_and_supervised_run(small_problem):
    sup = train(small_problem, TrainConfig(algorithm="supervised", epochs=12,
                                           learning_rate=1e-2, seed=0))
    rnd = train(small_problem, TrainConfig(algorithm="random", epochs=12,
                                           learning_rate=1e-2, seed=0))
    assert sup.metrics["accuracy"] > 0.9
    assert rnd.metrics["accuracy"] <= sup.metrics["accuracy"] + 0.01


def test_k1_baseline_equals_supervision():
    task = SyntheticTask.default(positive_rate=0.3, dim=3, separation=3.0, seed=4)
    train_s = sample_stream(task, 2000, seed=5)
    test_s = sample_stream(task, 1000, seed=6)
    prior = uniform_prior(1)
    sets = generate_attribution_sets(train_s, prior, seed=7)
    data = TrainData(features=train_s.features, sets=sets, prior=prior,
                     labels=train_s.labels, test_features=test_s.features,
                     test_labels=test_s.labels)
    cfg = TrainConfig(algorithm="random", epochs=15, learning_rate=1e-2, seed=1)
    base = train(data, cfg)
    sup = train(data, TrainConfig(algorithm="supervised", epochs=15,
                                  learning_rate=1e-2, seed=1))
    # k=1 hallucination reproduces the true labels, only in shuffled order
    assert abs(base.metrics["accuracy"] - sup.metrics["accuracy"]) <= 0.01


def test_divergence_raises():
    task = SyntheticTask.default(positive_rate=0.25, dim=2, seed=8)
    train_s = sample_stream(task, 1000, seed=9)
    data = TrainData(features=train_s.features * 1e150,
                     test_features=train_s.features, test_labels=train_s.labels,
                     labels=train_s.labels)
    with pytest.raises(DivergenceError) as err:
        train(data, TrainConfig(algorithm="supervised", epochs=3,
                                learning_rate=1e280, optimizer="sgd",
                                loss_name="square", seed=0))
    assert err.value.step >= 0


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(algorithm="magic")
    with pytest.raises(ConfigError):
        TrainConfig(algorithm="unbiased", learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(algorithm="unbiased", epochs=0)
    data = TrainData(features=np.zeros((10, 2)), test_features=np.zeros((2, 2)),
                     test_labels=np.array([0, 1]))
    with pytest.raises(ConfigError):
        train(data, TrainConfig(algorithm="unbiased"))
    with pytest.raises(ConfigError):
        train(data, TrainConfig(algorithm="supervised"))


def test_report_serializes(small_problem):
    report = train(small_problem, TrainConfig(algorithm="max_prior", epochs=2,
                                              learning_rate=1e-3, seed=0))
    payload = json.loads(report.to_json())
    assert payload["algorithm"] == "max_prior"
    assert len(payload["epoch_objectives"]) == 2
    assert len(payload["final_params"]) == 5
    assert set(payload["metrics"]) == {"accuracy", "log_loss", "f1"}


# ---------------------------------------------------------------------------
# Evaluation metrics.
# ---------------------------------------------------------------------------


def test_evaluate_constant_on_imbalanced_labels():
    labels = np.zeros(10_000, dtype=np.int8)
    labels[:1135] = 1
    metrics = evaluate(lambda X: np.full(X.shape[0], 0.49),
                       np.zeros((10_000, 1)), labels, clipped_log_loss(0.01))
    assert metrics["accuracy"] == pytest.approx(0.8865)
    assert metrics["f1"] == 0.0


def test_evaluate_perfect_predictor():
    labels = np.array([0, 1, 1, 0, 1], dtype=np.int8)
    metrics = evaluate(lambda X: labels.astype(float), np.zeros((5, 1)), labels,
                       square_loss())
    assert metrics["accuracy"] == 1.0
    assert metrics["f1"] == 1.0
    assert metrics["log_loss"] == 0.0


def test_evaluate_exact_half_predicts_zero():
    labels = np.array([1, 0], dtype=np.int8)
    metrics = evaluate(lambda X: np.full(X.shape[0], 0.5), np.zeros((2, 1)),
                       labels, square_loss())
    assert metrics["accuracy"] == 0.5  # the positive is missed
    assert metrics["f1"] == 0.0


def test_evaluate_empty_test_set():
    with pytest.raises(DomainError):
        evaluate(lambda X: np.zeros(X.shape[0]), np.zeros((0, 1)),
                 np.zeros(0, dtype=np.int8), square_loss())


def test_metric_ranges(small_problem):
    loss = clipped_log_loss(0.01)
    metrics = evaluate(lambda X: np.random.default_rng(0).random(X.shape[0]),
                       small_problem.test_features, small_problem.test_labels, loss)
    assert 0.0 <= metrics["accuracy"] <= 1.0
    assert 0.0 <= metrics["f1"] <= 1.0
    assert 0.0 <= metrics["log_loss"] <= loss.F1 + loss.F2


def test_trivial_floor_option(small_problem):
    cfg = TrainConfig(algorithm="random", epochs=1, learning_rate=1e-6, seed=0,
                      floor_trivial=True)
    report = train(small_problem, cfg)
    assert report.metrics["accuracy"] >= trivial_accuracy(small_problem.test_labels)


def test_lr_grid_and_sweep(small_problem):
    grid = default_lr_grid()
    assert grid.size == 10
    assert grid[0] == pytest.approx(1e-6)
    assert grid[-1] == pytest.approx(1e-2)
    result = lr_sweep(small_problem,
                      TrainConfig(algorithm="supervised", epochs=4,
                                  learning_rate=1e-3, seed=0),
                      lrs=[1e-4, 1e-2], repetitions=2)
    assert len(result["rows"]) == 2
    assert result["best"]["mean"] == max(r["mean"] for r in result["rows"])
