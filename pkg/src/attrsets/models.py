"""Hypothesis classes: logistic regression and a small ReLU MLP.

Both map feature vectors to [0, 1] through a final sigmoid and expose
exact parameter gradients via hand-coded backprop (no autodiff), so the
numeric core stays self-contained and testable against finite differences.

`weighted_param_grad(X, coeffs)` returns sum_i coeffs[i] * d h(x_i)/d theta
in one backward pass; it is the primitive every training objective needs,
since objectives here are weighted sums of per-point predictions passed
through scalar functions.

Parameter checkpoints serialize as an architecture header line followed by
the flat little-endian float64 parameter vector; round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DatasetError, DomainError

__all__ = ["LogisticModel", "MlpModel", "model_from_descriptor",
           "save_checkpoint", "load_checkpoint"]

_MAGIC = b"ATTRSETS-MODEL1\n"


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class _Model:
    params: np.ndarray

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def weighted_param_grad(self, X, coeffs) -> np.ndarray:
        raise NotImplementedError

    def grad_predict(self, x) -> np.ndarray:
        """d h(x) / d theta for a single feature vector."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.weighted_param_grad(x, np.ones(x.shape[0]))

    def __call__(self, X):
        return self.predict(X)

    def _check_dim(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DomainError(f"expected {self.dim}-dimensional features, got {X.shape[1]}")
        return X


class LogisticModel(_Model):
    """h(x) = sigmoid(w . x + b); params laid out as (w, b)."""

    def __init__(self, dim: int, params: np.ndarray | None = None):
        self.dim = int(dim)
        if params is None:
            params = np.zeros(self.dim + 1)
        params = np.asarray(params, dtype=np.float64).copy()
        if params.size != self.dim + 1:
            raise DomainError(f"expected {self.dim + 1} parameters, got {params.size}")
        self.params = params

    @property
    def descriptor(self) -> str:
        return f"logistic{{{self.dim}}}"

    def predict(self, X):
        X = self._check_dim(X)
        return sigmoid(X @ self.params[:-1] + self.params[-1])

    def weighted_param_grad(self, X, coeffs):
        X = self._check_dim(X)
        coeffs = np.asarray(coeffs, dtype=np.float64)
        h = sigmoid(X @ self.params[:-1] + self.params[-1])
        dz = coeffs * h * (1.0 - h)
        return np.concatenate([dz @ X, [dz.sum()]])


class MlpModel(_Model):
    """ReLU MLP with sigmoid output; default two hidden layers of 64 units.

    Initialization is fan-in scaled uniform, seeded. Parameters are stored
    flat in layer order (W then b per layer); forward and backward passes
    enumerate layers in that fixed order, so predictions are deterministic
    functions of (params, X).
    """

    def __init__(self, dim: int, hidden=(64, 64), seed=0, params: np.ndarray | None = None):
        self.dim = int(dim)
        self.hidden = tuple(int(u) for u in hidden)
        sizes = (self.dim, *self.hidden, 1)
        self._shapes = [(sizes[t], sizes[t + 1]) for t in range(len(sizes) - 1)]
        total = sum(a * b + b for a, b in self._shapes)
        if params is not None:
            params = np.asarray(params, dtype=np.float64).copy()
            if params.size != total:
                raise DomainError(f"expected {total} parameters, got {params.size}")
            self.params = params
        else:
            rng = np.random.default_rng(seed)
            chunks = []
            for fan_in, fan_out in self._shapes:
                bound = 1.0 / np.sqrt(fan_in)
                chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
                chunks.append(np.zeros(fan_out))
            self.params = np.concatenate(chunks)

    @property
    def descriptor(self) -> str:
        inner = ",".join(str(u) for u in self.hidden)
        return f"mlp{{{self.dim};{inner}}}"

    def _layers(self):
        out = []
        offset = 0
        for fan_in, fan_out in self._shapes:
            W = self.params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = self.params[offset:offset + fan_out]
            offset += fan_out
            out.append((W, b))
        return out

    def _forward(self, X):
        activations = [X]
        pre = []
        a = X
        layers = self._layers()
        for idx, (W, b) in enumerate(layers):
            z = a @ W + b
            pre.append(z)
            a = np.maximum(z, 0.0) if idx < len(layers) - 1 else sigmoid(z)
            activations.append(a)
        return activations, pre

    def predict(self, X):
        X = self._check_dim(X)
        acts, _ = self._forward(X)
        return acts[-1][:, 0]

    def weighted_param_grad(self, X, coeffs):
        X = self._check_dim(X)
        coeffs = np.asarray(coeffs, dtype=np.float64)
        acts, pre = self._forward(X)
        layers = self._layers()
        h = acts[-1][:, 0]
        delta = (coeffs * h * (1.0 - h))[:, None]  # d(sum c_i h_i)/d z_last
        grads = [None] * len(layers)
        for idx in range(len(layers) - 1, -1, -1):
            W, _ = layers[idx]
            gW = acts[idx].T @ delta
            gb = delta.sum(axis=0)
            grads[idx] = (gW, gb)
            if idx > 0:
                delta = (delta @ W.T) * (pre[idx - 1] > 0.0)
        return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def model_from_descriptor(descriptor: str, params: np.ndarray | None = None) -> _Model:
    if descriptor.startswith("logistic{") and descriptor.endswith("}"):
        dim = int(descriptor[len("logistic{"):-1])
        return LogisticModel(dim, params=params)
    if descriptor.startswith("mlp{") and descriptor.endswith("}"):
        body = descriptor[len("mlp{"):-1]
        dim_part, hidden_part = body.split(";")
        hidden = tuple(int(u) for u in hidden_part.split(",") if u)
        return MlpModel(int(dim_part), hidden=hidden, params=params)
    raise DomainError(f"unknown architecture descriptor {descriptor!r}")


def save_checkpoint(path, model: _Model) -> None:
    header = json.dumps({"arch": model.descriptor, "count": int(model.params.size)})
    with open(path, "wb") as fp:
        fp.write(_MAGIC)
        fp.write(header.encode() + b"\n")
        fp.write(struct.pack(f"<{model.params.size}d", *model.params))


def load_checkpoint(path) -> _Model:
    with open(path, "rb") as fp:
        magic = fp.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DatasetError(f"{path}: not a model checkpoint")
        header = json.loads(fp.readline().decode())
        raw = fp.read(8 * header["count"])
    params = np.array(struct.unpack(f"<{header['count']}d", raw))
    return model_from_descriptor(header["arch"], params=params)
