"""L2-regularized logistic loss and its gradients.

For labels ``y`` in {+1, -1} and unit-norm features the per-sample loss is
``log(1 + exp(-y <w, x>)) + lam/2 ||w||^2``. On the ball ``||w|| <= R`` this
is ``L``-Lipschitz with ``L = 1 + lam R``, ``mu``-smooth with ``mu = 1 + lam``
and ``lam``-strongly convex.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit


class LabeledSample(NamedTuple):
    x: np.ndarray
    y: float


@dataclass(frozen=True)
class LossParams:
    lam: float = 0.0
    radius: float = 50.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.radius <= 0:
            raise ValueError("radius must be > 0")

    @property
    def lipschitz(self) -> float:
        return 1.0 + self.lam * self.radius

    @property
    def smoothness(self) -> float:
        return 1.0 + self.lam

    @property
    def strong_convexity(self) -> float:
        return self.lam


def constants(params: LossParams) -> tuple[float, float, float]:
    """``(L, mu, gamma)`` for the regularized logistic loss."""
    return params.lipschitz, params.smoothness, params.strong_convexity


@dataclass
class MiniBatch:
    """Indices into a task's samples. ``size`` may fall short of the nominal b."""

    indices: np.ndarray
    task: object  # anything exposing X (n, d) and y (n,)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if len(self.indices) == 0:
            raise ValueError("empty mini-batch")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("mini-batch indices must be distinct")

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def X(self) -> np.ndarray:
        return self.task.X[self.indices]

    @property
    def y(self) -> np.ndarray:
        return self.task.y[self.indices]


def _log1p_exp_neg(margin):
    # log(1 + exp(-m)) without overflow for either sign of m
    return np.logaddexp(0.0, -margin)


def loss(w, sample: LabeledSample, params: LossParams) -> float:
    w = np.asarray(w, dtype=np.float64)
    margin = sample.y * float(np.dot(w, sample.x))
    return float(_log1p_exp_neg(margin)) + 0.5 * params.lam * float(np.dot(w, w))


def grad(w, sample: LabeledSample, params: LossParams) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    margin = sample.y * float(np.dot(w, sample.x))
    coef = -sample.y * float(expit(-margin))
    return coef * np.asarray(sample.x, dtype=np.float64) + params.lam * w


def losses_array(w: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Per-row losses for a block of samples."""
    return _log1p_exp_neg(y * (X @ w)) + 0.5 * lam * float(np.dot(w, w))


def mean_loss(w: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float) -> float:
    return float(np.mean(_log1p_exp_neg(y * (X @ w)))) + 0.5 * lam * float(np.dot(w, w))


def mean_grad(w: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    coef = -y * expit(-y * (X @ w))
    return (coef @ X) / len(y) + lam * w


def batch_grad(w, batch: MiniBatch, params: LossParams) -> np.ndarray:
    """Average gradient over the batch's actual size."""
    if batch.size == 0:
        raise ValueError("empty mini-batch")
    return mean_grad(np.asarray(w, dtype=np.float64), batch.X, batch.y, params.lam)


def batch_loss(w, batch: MiniBatch, params: LossParams) -> float:
    return mean_loss(np.asarray(w, dtype=np.float64), batch.X, batch.y, params.lam)


def empirical_risk(w, task, params: LossParams) -> float:
    if len(task.y) == 0:
        raise ValueError("empty task")
    return mean_loss(np.asarray(w, dtype=np.float64), task.X, task.y, params.lam)
