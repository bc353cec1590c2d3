"""Differentiable objectives over flat parameter vectors.

Every model exposes ``loss(params, data, batch)`` (mean over the batch rows)
and its exact analytic ``grad``. :func:`finite_diff_grad` is the independent
oracle used to check them.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np

from dfedsim.data import Dataset
from dfedsim.errors import DivergenceError

__all__ = [
    "ObjectiveModel",
    "QuadraticModel",
    "LogisticModel",
    "MlpModel",
    "finite_diff_grad",
    "check_params",
    "relative_error",
]


def check_params(params: np.ndarray, dim: int) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    if params.shape != (dim,):
        raise ValueError(f"expected a parameter vector of shape ({dim},), got {params.shape}")
    if not np.all(np.isfinite(params)):
        raise DivergenceError("non-finite entries in parameter vector")
    return params


def _rows(data: Dataset, batch) -> tuple[np.ndarray, np.ndarray]:
    if batch is None:
        return data.features, data.targets
    batch = np.asarray(batch)
    if batch.size == 0:
        raise ValueError("empty batch")
    return data.features[batch], data.targets[batch]


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class ObjectiveModel(ABC):
    """A loss over flat ``dim``-vectors, evaluated on rows of a :class:`Dataset`.

    ``batch`` is an index array into ``data`` or ``None`` for every row.
    """

    dim: int

    def loss(self, params, data: Dataset, batch=None) -> float:
        params = check_params(params, self.dim)
        value = self._loss(params, *_rows(data, batch))
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss {value!r}")
        return value

    def grad(self, params, data: Dataset, batch=None) -> np.ndarray:
        params = check_params(params, self.dim)
        g = self._grad(params, *_rows(data, batch))
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
        return g

    def scores(self, params, features: np.ndarray) -> np.ndarray:
        raise TypeError(f"{type(self).__name__} is not a classifier")

    @property
    def is_classifier(self) -> bool:
        return False

    def init_params(self, seed: int = 0) -> np.ndarray:
        return np.zeros(self.dim)

    @abstractmethod
    def _loss(self, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> float: ...

    @abstractmethod
    def _grad(self, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray: ...


class QuadraticModel(ObjectiveModel):
    """Least squares: ``||X theta - y||^2 / (2 n_batch)``."""

    def __init__(self, d: int):
        self.dim = d

    def _loss(self, params, x, y):
        r = x @ params - y
        return float(r @ r) / (2 * len(y))

    def _grad(self, params, x, y):
        return x.T @ (x @ params - y) / len(y)


class LogisticModel(ObjectiveModel):
    """Multinomial logistic regression with linear scores ``x W + b``.

    Layout: ``W`` (d x C, row-major) followed by ``b`` (C). ``l2`` adds
    ``l2/2 * ||W||^2``; the bias is not penalized.
    """

    def __init__(self, d: int, n_classes: int, l2: float = 0.0):
        self.d, self.n_classes, self.l2 = d, n_classes, l2
        self.dim = d * n_classes + n_classes

    @property
    def is_classifier(self) -> bool:
        return True

    def _unpack(self, params):
        split = self.d * self.n_classes
        return params[:split].reshape(self.d, self.n_classes), params[split:]

    def scores(self, params, features):
        w, b = self._unpack(params)
        return features @ w + b

    def _loss(self, params, x, y):
        w, _ = self._unpack(params)
        logp = _log_softmax(self.scores(params, x))
        return float(-logp[np.arange(len(y)), y].mean() + 0.5 * self.l2 * np.sum(w * w))

    def _grad(self, params, x, y):
        w, _ = self._unpack(params)
        probs = np.exp(_log_softmax(self.scores(params, x)))
        probs[np.arange(len(y)), y] -= 1.0
        probs /= len(y)
        gw = x.T @ probs + self.l2 * w
        return np.concatenate([gw.ravel(), probs.sum(axis=0)])


class MlpModel(ObjectiveModel):
    """One tanh hidden layer followed by softmax cross-entropy.

    Layout: ``W1`` (d x h), ``b1`` (h), ``W2`` (h x C), ``b2`` (C).
    """

    def __init__(self, d: int, hidden: int, n_classes: int, l2: float = 0.0):
        self.d, self.hidden, self.n_classes, self.l2 = d, hidden, n_classes, l2
        self._sizes = (d * hidden, hidden, hidden * n_classes, n_classes)
        self.dim = sum(self._sizes)

    @property
    def is_classifier(self) -> bool:
        return True

    def _unpack(self, params):
        w1, b1, w2, b2 = np.split(params, np.cumsum(self._sizes)[:-1])
        return w1.reshape(self.d, self.hidden), b1, w2.reshape(self.hidden, self.n_classes), b2

    def _forward(self, params, x):
        w1, b1, w2, b2 = self._unpack(params)
        h = np.tanh(x @ w1 + b1)
        return h, h @ w2 + b2

    def scores(self, params, features):
        return self._forward(params, features)[1]

    def init_params(self, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        lim1 = math.sqrt(6.0 / (self.d + self.hidden))
        lim2 = math.sqrt(6.0 / (self.hidden + self.n_classes))
        return np.concatenate(
            [
                rng.uniform(-lim1, lim1, self._sizes[0]),
                np.zeros(self.hidden),
                rng.uniform(-lim2, lim2, self._sizes[2]),
                np.zeros(self.n_classes),
            ]
        )

    def _penalty(self, params):
        w1, _, w2, _ = self._unpack(params)
        return 0.5 * self.l2 * (np.sum(w1 * w1) + np.sum(w2 * w2))

    def _loss(self, params, x, y):
        _, s = self._forward(params, x)
        logp = _log_softmax(s)
        return float(-logp[np.arange(len(y)), y].mean() + self._penalty(params))

    def _grad(self, params, x, y):
        w1, _, w2, _ = self._unpack(params)
        h, s = self._forward(params, x)
        ds = np.exp(_log_softmax(s))
        ds[np.arange(len(y)), y] -= 1.0
        ds /= len(y)
        gw2 = h.T @ ds + self.l2 * w2
        dz = (ds @ w2.T) * (1.0 - h * h)
        gw1 = x.T @ dz + self.l2 * w1
        return np.concatenate([gw1.ravel(), dz.sum(axis=0), gw2.ravel(), ds.sum(axis=0)])


def finite_diff_grad(model: ObjectiveModel, params, data: Dataset, batch=None, h=1e-5) -> np.ndarray:
    """Central-difference gradient; ``h`` is a scalar or a per-coordinate array."""
    params = np.asarray(params, dtype=float)
    steps = np.broadcast_to(np.asarray(h, dtype=float), params.shape)
    if np.any(steps <= 0):
        raise ValueError("finite-difference step must be > 0")
    out = np.empty_like(params)
    probe = params.copy()
    for j in range(params.size):
        probe[j] = params[j] + steps[j]
        up = model.loss(probe, data, batch)
        probe[j] = params[j] - steps[j]
        down = model.loss(probe, data, batch)
        probe[j] = params[j]
        out[j] = (up - down) / (2 * steps[j])
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Largest coordinate-wise ``|a - b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
