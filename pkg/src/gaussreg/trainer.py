"""Mini-batch Adam training under the Gaussian NLL (or squared error) loss."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import rng
from .datasets import Dataset
from .errors import DataError, DimensionError, DomainError, NonFiniteError, TrainingAbort
from .gauss_head import mse_tensor, nll_tensor
from .network import Network

log = logging.getLogger(__name__)

LOSSES = ("nll", "mse")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings.

    Defaults are desk-scale choices.  ``IMAGE_SCALE_CONFIG`` holds the
    learning rate / batch size used for the large image regressor.
    """

    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 40
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    clip_norm: Optional[float] = 10.0
    patience: Optional[int] = None
    loss: str = "nll"
    require_standardized: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not self.adam_epsilon > 0:
            raise ValueError("adam_epsilon must be positive")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive or None")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 or None")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


IMAGE_SCALE_CONFIG = TrainConfig(learning_rate=5e-5, batch_size=8, epochs=6)


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    t: int,
    cfg: TrainConfig,
) -> Tuple[List[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new parameters and state."""
    if t < 1:
        raise ValueError("Adam step index t starts at 1")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError("params, grads and Adam state differ in length")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise DimensionError(f"adam_step: shape mismatch {p.shape} / {g.shape} / {m.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v)


def clip_by_global_norm(grads: List[np.ndarray], max_norm: float) -> List[np.ndarray]:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if norm > max_norm:
        return [g * (max_norm / norm) for g in grads]
    return grads


@dataclass
class TrainHistory:
    loss: str = "nll"
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: Optional[int] = None

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"epoch,train_{self.loss},val_{self.loss}\n")
            for i, tr in enumerate(self.train_loss):
                va = repr(self.val_loss[i]) if i < len(self.val_loss) else ""
                fh.write(f"{i + 1},{tr!r},{va}\n")


def _check_scale(data: Dataset) -> None:
    if data.standardizer is not None:
        return
    y = data.targets
    if len(y) < 2:
        return
    mean = np.abs(y.mean(axis=0))
    std = y.std(axis=0)
    if np.any(mean > 1.0) or np.any(std < 0.5) or np.any(std > 2.0):
        raise DataError(
            "training targets are not standardized (no Standardizer attached and "
            f"column mean/std {mean.tolist()}/{std.tolist()} are not unit-scale)"
        )


def batch_loss(net: Network, x: np.ndarray, y: np.ndarray, loss: str = "nll"):
    out = net.forward(x)
    if loss == "nll":
        if out.sigma is None:
            raise ValueError("nll loss needs a gaussian head")
        return nll_tensor(out.mu, out.sigma, y)
    return mse_tensor(out.mu, y)


def evaluate_loss(net: Network, data: Dataset, loss: str = "nll") -> float:
    return batch_loss(net, data.features, data.targets, loss).item()


def _param_norms(net: Network) -> List[float]:
    return [float(np.linalg.norm(p.data)) for p in net.params]


def train(
    net: Network,
    train_set: Dataset,
    val_set: Optional[Dataset] = None,
    cfg: TrainConfig = TrainConfig(),
) -> Tuple[Network, TrainHistory]:
    """Optimize ``net`` in place; returns it with the per-epoch history.

    Batch order comes from the ``shuffle`` stream of ``cfg.seed``.  The last
    partial batch of an epoch is kept.
    """
    if len(train_set) == 0:
        raise DataError("empty training set")
    if train_set.n_features != net.spec.input_dim or train_set.n_targets != net.spec.output_dim:
        raise DimensionError(
            f"dataset is {train_set.n_features}->{train_set.n_targets}, network is "
            f"{net.spec.input_dim}->{net.spec.output_dim}"
        )
    if cfg.require_standardized:
        _check_scale(train_set)

    history = TrainHistory(loss=cfg.loss)
    x_all, y_all = train_set.features, train_set.targets
    n = len(train_set)
    order_rng = rng.stream(cfg.seed, "shuffle")
    state = AdamState.zeros_like([p.data for p in net.params])
    step = 0
    best_val, best_params, since_best = np.inf, None, 0

    for epoch in range(cfg.epochs):
        order = order_rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            net.zero_grad()
            try:
                loss = batch_loss(net, x_all[idx], y_all[idx], cfg.loss)
            except (NonFiniteError, DomainError):
                loss = None
            if loss is None or not np.isfinite(loss.data).all():
                norms = _param_norms(net)
                raise TrainingAbort(
                    f"non-finite loss at epoch {epoch + 1}, batch {b}; parameter norms "
                    + ", ".join(f"{v:.4g}" for v in norms),
                    batch_index=b,
                    param_norms=norms,
                )
            total += loss.item() * len(idx)
            loss.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in net.params]
            if cfg.clip_norm is not None:
                grads = clip_by_global_norm(grads, cfg.clip_norm)
            step += 1
            new_params, state = adam_step([p.data for p in net.params], grads, state, step, cfg)
            for p, arr in zip(net.params, new_params):
                p.data = arr
        history.train_loss.append(total / n)

        if val_set is not None:
            val = evaluate_loss(net, val_set, cfg.loss)
            history.val_loss.append(val)
            if cfg.patience is not None:
                if val < best_val:
                    best_val, best_params, since_best = val, net.parameter_arrays(), 0
                    history.best_epoch = epoch + 1
                else:
                    since_best += 1
                    if since_best >= cfg.patience:
                        log.info("early stop after epoch %d (best %d)", epoch + 1, history.best_epoch)
                        break

    if best_params is not None:
        for p, arr in zip(net.params, best_params):
            p.data = arr
    net.zero_grad()
    return net, history
