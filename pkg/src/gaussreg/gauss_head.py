"""Diagonal Gaussian predictions, the negative log-likelihood loss, and intervals.

Per-sample loss for a D-dimensional target with independent components::

    nll = 1/2 * sum_d [ ((y_d - mu_d) / sigma_d)**2 + log(2 pi) + 2 log(sigma_d) ]

Batches use the mean over samples.  All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, DomainError

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class GaussianPrediction:
    """Per-sample means and standard deviations.

    ``mu`` and ``sigma`` are either length-D vectors (one sample) or N x D
    matrices (a batch).
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.shape != sigma.shape:
            raise DimensionError(f"mu shape {mu.shape} != sigma shape {sigma.shape}")
        if np.any(~(sigma > 0)):
            raise DomainError("sigma must be strictly positive everywhere")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[-1] if self.mu.ndim else 1

    def __len__(self) -> int:
        return self.mu.shape[0] if self.mu.ndim == 2 else 1

    def rows(self, index) -> "GaussianPrediction":
        return GaussianPrediction(self.mu[index], self.sigma[index])

    def affine(self, shift, scale) -> "GaussianPrediction":
        """Distribution of ``shift + scale * Y``; used for destandardization."""
        scale = np.asarray(scale, dtype=np.float64)
        if np.any(scale <= 0):
            raise DomainError("affine scale must be positive")
        return GaussianPrediction(self.mu * scale + shift, self.sigma * scale)


@dataclass(frozen=True)
class IntervalBand:
    lower: np.ndarray
    upper: np.ndarray
    k: float

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return (y >= self.lower) & (y <= self.upper)


def _check_targets(pred: GaussianPrediction, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != pred.mu.shape:
        raise DimensionError(f"target shape {y.shape} does not match prediction {pred.mu.shape}")
    return y


def _per_sample(pred: GaussianPrediction, y: np.ndarray) -> np.ndarray:
    z = (y - pred.mu) / pred.sigma
    terms = 0.5 * (z * z + LOG_2PI + 2.0 * np.log(pred.sigma))
    return terms.sum(axis=-1)


def nll_sample(pred: GaussianPrediction, y) -> float:
    """NLL of one D-dimensional observation."""
    if pred.mu.ndim > 1:
        raise DimensionError("nll_sample takes a single sample; use nll_batch for batches")
    return float(_per_sample(pred, _check_targets(pred, y)))


def nll_batch(preds: GaussianPrediction, ys) -> float:
    """Mean per-sample NLL over a batch of N >= 1 rows."""
    ys = _check_targets(preds, ys)
    if ys.ndim != 2:
        raise DimensionError(f"nll_batch expects N x D arrays, got shape {ys.shape}")
    if ys.shape[0] == 0:
        raise DimensionError("nll_batch: empty batch")
    return float(_per_sample(preds, ys).mean())


def reduced_objective(preds: GaussianPrediction, ys) -> float:
    """Constant-free objective sum(z^2) + 2 sum(log sigma), divided by N.

    ``nll_batch == reduced_objective / 2 + D/2 * log(2 pi)``.
    """
    ys = _check_targets(preds, ys)
    if ys.ndim != 2 or ys.shape[0] == 0:
        raise DimensionError(f"reduced_objective expects non-empty N x D arrays, got {ys.shape}")
    z = (ys - preds.mu) / preds.sigma
    return float((z * z + 2.0 * np.log(preds.sigma)).sum() / ys.shape[0])


def nll_tensor(mu: T.Tensor, sigma: T.Tensor, ys) -> T.Tensor:
    """Differentiable batch-mean NLL; matches :func:`nll_batch` in value."""
    ys = np.asarray(ys, dtype=np.float64)
    if mu.shape != sigma.shape or mu.shape != ys.shape or mu.data.ndim != 2:
        raise DimensionError(f"nll: shapes mu {mu.shape}, sigma {sigma.shape}, y {ys.shape}")
    n, d = ys.shape
    resid = T.sub(T.Tensor(ys), mu)
    log_sigma = T.log(sigma)
    inv_var = T.exp(T.scale(log_sigma, -2.0))
    per_entry = T.add(T.scale(T.mul(T.square(resid), inv_var), 0.5), log_sigma)
    total = T.scale(T.reduce_sum(per_entry), 1.0 / n)
    return T.add(total, T.Tensor(0.5 * d * LOG_2PI))


def mse_tensor(mu: T.Tensor, ys) -> T.Tensor:
    """Mean over samples of the summed squared error; loss of the point regressor."""
    ys = np.asarray(ys, dtype=np.float64)
    if mu.shape != ys.shape:
        raise DimensionError(f"mse: shapes {mu.shape} and {ys.shape} differ")
    return T.scale(T.reduce_sum(T.square(T.sub(T.Tensor(ys), mu))), 1.0 / ys.shape[0])


def confidence_interval(pred: GaussianPrediction, k: float = 3.0) -> IntervalBand:
    if not k > 0:
        raise DomainError(f"interval multiplier k must be positive, got {k}")
    half = k * pred.sigma
    return IntervalBand(pred.mu - half, pred.mu + half, float(k))


def nll_rescale(nll_standardized: float, target_scale) -> float:
    """Convert an NLL measured on standardized targets back to original units.

    If ``y = mean + scale * z`` then ``-log p(y) = -log p(z) + sum(log scale)``.
    """
    scale = np.atleast_1d(np.asarray(target_scale, dtype=np.float64))
    if np.any(~(scale > 0)):
        raise DomainError("target scale entries must be positive")
    return float(nll_standardized + np.log(scale).sum())
