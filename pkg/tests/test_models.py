import numpy as np
import pytest

from attrsets.errors import DomainError
from attrsets.models import (
    LogisticModel,
    MlpModel,
    load_checkpoint,
    model_from_descriptor,
    save_checkpoint,
    sigmoid,
)


def central_diff_grad(model, x, eps=1e-6):
    base = model.params.copy()
    out = np.empty_like(base)
    for t in range(base.size):
        model.params = base.copy()
        model.params[t] += eps
        hi = float(model.predict(x[None, :])[0])
        model.params = base.copy()
        model.params[t] -= eps
        lo = float(model.predict(x[None, :])[0])
        out[t] = (hi - lo) / (2 * eps)
    model.params = base
    return out


def test_logistic_zero_params_predicts_half():
    model = LogisticModel(4)
    X = np.random.default_rng(0).normal(size=(10, 4))
    assert np.allclose(model.predict(X), 0.5)


def test_logistic_bias_closed_form():
    model = LogisticModel(2, params=np.array([0.0, 0.0, 10.0]))
    assert float(model.predict(np.zeros((1, 2)))) == pytest.approx(
        1.0 / (1.0 + np.exp(-10.0)), rel=1e-12
    )


def test_logistic_gradient_closed_form():
    rng = np.random.default_rng(1)
    model = LogisticModel(3, params=rng.normal(size=4))
    x = rng.normal(size=3)
    h = float(model.predict(x[None, :])[0])
    expected = h * (1 - h) * np.concatenate([x, [1.0]])
    assert np.allclose(model.grad_predict(x), expected, rtol=1e-12)


def test_mlp_forward_matches_hand_computation():
    # one hidden layer of two units, hand-selected weights
    model = MlpModel(2, hidden=(2,), seed=0)
    W1 = np.array([[1.0, -1.0], [0.5, 2.0]])
    b1 = np.array([0.1, -0.2])
    w2 = np.array([[2.0], [-1.0]])
    b2 = np.array([0.3])
    model.params = np.concatenate([W1.ravel(), b1, w2.ravel(), b2])
    x = np.array([0.4, -0.7])
    z1 = x @ W1 + b1
    a1 = np.maximum(z1, 0.0)
    z2 = float((a1 @ w2 + b2)[0])
    assert float(model.predict(x[None, :])[0]) == pytest.approx(
        float(sigmoid(z2)), rel=1e-12
    )


@pytest.mark.parametrize("make", [
    lambda rng: LogisticModel(5, params=rng.normal(size=6)),
    lambda rng: MlpModel(4, hidden=(8, 6), seed=3),
])
def test_gradients_match_finite_differences(make):
    rng = np.random.default_rng(7)
    model = make(rng)
    for _ in range(50):
        x = rng.normal(size=model.dim)
        analytic = model.grad_predict(x)
        fd = central_diff_grad(model, x)
        scale = max(1.0, float(np.max(np.abs(analytic))))
        assert np.max(np.abs(analytic - fd)) <= 1e-5 * scale


def test_saturated_gradient_vanishes():
    model = LogisticModel(1, params=np.array([0.0, 30.0]))
    assert np.max(np.abs(model.grad_predict(np.zeros(1)))) <= 1e-12


def test_weighted_grad_is_linear_combination():
    rng = np.random.default_rng(11)
    model = MlpModel(3, hidden=(5,), seed=1)
    X = rng.normal(size=(6, 3))
    coeffs = rng.normal(size=6)
    combined = model.weighted_param_grad(X, coeffs)
    individual = sum(c * model.grad_predict(x) for c, x in zip(coeffs, X))
    assert np.allclose(combined, individual, atol=1e-12)


def test_prediction_determinism():
    X = np.random.default_rng(2).normal(size=(20, 4))
    a = MlpModel(4, seed=9)
    b = MlpModel(4, seed=9)
    assert np.array_equal(a.params, b.params)
    assert np.array_equal(a.predict(X), b.predict(X))


def test_predictions_stay_in_unit_interval():
    rng = np.random.default_rng(4)
    model = MlpModel(6, hidden=(16, 16), seed=5)
    X = 100.0 * rng.normal(size=(50, 6))
    h = model.predict(X)
    assert np.all((h >= 0.0) & (h <= 1.0))


def test_dimension_mismatch():
    model = LogisticModel(3)
    with pytest.raises(DomainError):
        model.predict(np.zeros((2, 4)))


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(8)
    for model in (LogisticModel(4, params=rng.normal(size=5)),
                  MlpModel(3, hidden=(7, 5), seed=2)):
        path = tmp_path / "model.bin"
        save_checkpoint(path, model)
        loaded = load_checkpoint(path)
        assert loaded.descriptor == model.descriptor
        assert np.array_equal(loaded.params, model.params)
        X = rng.normal(size=(5, model.dim))
        assert np.array_equal(loaded.predict(X), model.predict(X))


def test_descriptor_round_trip():
    model = model_from_descriptor("mlp{4;8,8}")
    assert isinstance(model, MlpModel)
    assert model.dim == 4 and model.hidden == (8, 8)
    with pytest.raises(DomainError):
        model_from_descriptor("tree{3}")
