"""Uses of the predicted sigma: series anomaly flagging and training-set cleaning."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .datasets import Dataset, Standardizer, fit_standardizer
from .errors import DataError, DimensionError
from .evaluation import EvalReport, evaluate
from .network import Network, NetworkSpec
from .trainer import TrainConfig, TrainHistory, train

DEFAULT_LOOKBACK = 10
DEFAULT_THRESHOLD = 0.5
DEFAULT_CLEAN_FRACTION = 0.05


# -- time series ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WindowedSeries:
    """Row ``t`` holds ``series[t : t + n]`` and predicts ``series[t + n]``."""

    windows: np.ndarray
    next_values: np.ndarray
    target_index: np.ndarray
    series_length: int

    @property
    def lookback(self) -> int:
        return self.windows.shape[1]

    def __len__(self) -> int:
        return self.windows.shape[0]

    def to_dataset(self) -> Dataset:
        n = self.lookback
        names = tuple(f"lag_{n - j}" for j in range(n))
        return Dataset(self.windows, self.next_values, names, ("next",), provenance="windowed series")


def windowize(series, lookback: int = DEFAULT_LOOKBACK) -> WindowedSeries:
    v = np.asarray(series, dtype=np.float64).reshape(-1)
    if lookback < 1:
        raise ValueError("lookback must be >= 1")
    if v.size <= lookback:
        raise DataError(f"series of length {v.size} is too short for lookback {lookback}")
    m = v.size - lookback
    windows = np.lib.stride_tricks.sliding_window_view(v, lookback)[:m].copy()
    return WindowedSeries(windows, v[lookback:].reshape(-1, 1).copy(), np.arange(lookback, v.size), v.size)


@dataclass
class SeriesModel:
    """A trained next-value model plus the scaling needed to score new series.

    ``series_scale`` is the (mean, std) the scored series is divided by before
    windowing; it is (0, 1) unless the model was trained on a family of series.
    """

    net: Network
    standardizer: Standardizer
    history: TrainHistory
    lookback: int
    series_scale: Tuple[float, float] = (0.0, 1.0)

    def uncertainty(self, series) -> np.ndarray:
        mean, std = self.series_scale
        v = (np.asarray(series, dtype=np.float64) - mean) / std
        return uncertainty_series(self.net, windowize(v, self.lookback), self.standardizer) * std


def default_series_spec(lookback: int = DEFAULT_LOOKBACK, seed: int = 0) -> NetworkSpec:
    return NetworkSpec(lookback, ((64, "relu"),), (64,), "relu", seed=seed)


DEFAULT_SERIES_CONFIG = TrainConfig(epochs=300, batch_size=32, learning_rate=1e-3)


def _zscore(v: np.ndarray) -> Tuple[np.ndarray, Tuple[float, float]]:
    mean, std = float(v.mean()), float(v.std())
    std = std if std > 1e-12 * max(1.0, abs(mean)) else 1.0
    return (v - mean) / std, (mean, std)


def fit_series_model(
    series,
    lookback: int = DEFAULT_LOOKBACK,
    spec: Optional[NetworkSpec] = None,
    cfg: TrainConfig = DEFAULT_SERIES_CONFIG,
    family: Sequence = (),
) -> SeriesModel:
    """Train a next-value Gaussian regressor on lag windows of ``series``.

    Windows and targets are standardized globally (per lag column), never per
    window.  Extra ``family`` series are z-scored one by one, windowed, and
    their windows concatenated with those of ``series`` (also z-scored).
    """
    v = np.asarray(series, dtype=np.float64).reshape(-1)
    scale = (0.0, 1.0)
    parts = [v]
    if family:
        v, scale = _zscore(v)
        parts = [v] + [_zscore(np.asarray(f, dtype=np.float64).reshape(-1))[0] for f in family]
    wss = [windowize(p, lookback) for p in parts]
    data = Dataset(
        np.concatenate([w.windows for w in wss]),
        np.concatenate([w.next_values for w in wss]),
        wss[0].to_dataset().feature_names,
        ("next",),
        provenance="windowed series",
    )
    st = fit_standardizer(data)
    spec = replace(spec or default_series_spec(lookback), input_dim=lookback, output_dim=1)
    net, history = train(Network.init(spec), st.apply(data), None, cfg)
    return SeriesModel(net, st, history, lookback, scale)


def uncertainty_series(net: Network, ws: WindowedSeries, standardizer: Standardizer) -> np.ndarray:
    """Predicted sigma (original units) per time index; the first ``lookback`` entries are NaN."""
    if net.spec.input_dim != ws.lookback:
        raise DimensionError(f"network was built for lookback {net.spec.input_dim}, windows use {ws.lookback}")
    pred = net.predict(standardizer.transform_features(ws.windows))
    out = np.full(ws.series_length, np.nan)
    out[ws.target_index] = pred.sigma[:, 0] * standardizer.y_std[0]
    return out


@dataclass
class AnomalyReport:
    sigma: np.ndarray
    normalized: np.ndarray
    threshold: float
    flagged: List[int]
    intervals: List[Tuple[int, int, float]]
    normalize: bool = True
    degenerate: bool = False

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "threshold": self.threshold,
            "normalize": self.normalize,
            "degenerate": self.degenerate,
            "flagged": list(self.flagged),
            "intervals": [{"start_index": s, "end_index": e, "peak_uncertainty": p} for s, e, p in self.intervals],
            "sigma": clean(self.sigma),
            "normalized_uncertainty": clean(self.normalized),
        }

    def write_intervals_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["start_index", "end_index", "peak_uncertainty"])
            for s, e, p in self.intervals:
                w.writerow([s, e, repr(p)])


def _runs(indices: Sequence[int]) -> List[Tuple[int, int]]:
    runs: List[Tuple[int, int]] = []
    for i in indices:
        if runs and i == runs[-1][1] + 1:
            runs[-1] = (runs[-1][0], i)
        else:
            runs.append((i, i))
    return runs


def flag_anomalies(sigma_series, threshold: float = DEFAULT_THRESHOLD, normalize: bool = True) -> AnomalyReport:
    """Flag indices whose uncertainty exceeds ``threshold``.

    With ``normalize`` the finite part of the series is min-max scaled to
    [0, 1] first, so the threshold is a fraction of the observed range.
    NaN entries (no prediction) are never flagged and break intervals.
    """
    sigma = np.asarray(sigma_series, dtype=np.float64).reshape(-1)
    finite = np.isfinite(sigma)
    if not finite.any():
        raise DataError("uncertainty series has no finite values")
    degenerate = False
    if normalize:
        if not 0 < threshold < 1:
            raise ValueError("normalized threshold must lie in (0, 1)")
        lo, hi = sigma[finite].min(), sigma[finite].max()
        score = np.full_like(sigma, np.nan)
        if hi > lo:
            score[finite] = (sigma[finite] - lo) / (hi - lo)
        else:
            warnings.warn("uncertainty series is constant; min-max normalization is degenerate, nothing flagged")
            score[finite] = 0.0
            degenerate = True
    else:
        if not threshold > 0:
            raise ValueError("raw-sigma threshold must be positive")
        score = sigma.copy()
    above = np.zeros(sigma.shape, dtype=bool)
    above[finite] = score[finite] > threshold
    if degenerate:
        above[:] = False
    flagged = [int(i) for i in np.flatnonzero(above)]
    intervals = [(s, e, float(sigma[s:e + 1].max())) for s, e in _runs(flagged)]
    return AnomalyReport(sigma, score, float(threshold), flagged, intervals, normalize, degenerate)


# -- dataset cleaning -----------------------------------------------------------


def _sigma_scores(net: Network, data: Dataset, standardizer: Optional[Standardizer]) -> np.ndarray:
    x = data.features if standardizer is None else standardizer.transform_features(data.features)
    return net.predict(x).sigma.mean(axis=1)


def clean_dataset(
    net: Network,
    train_set: Dataset,
    fraction: float = DEFAULT_CLEAN_FRACTION,
    standardizer: Optional[Standardizer] = None,
) -> Tuple[Dataset, np.ndarray]:
    """Drop the ``ceil(fraction * N)`` rows with the largest predicted sigma.

    Ties go to the lower row index.  ``standardizer`` maps raw features into
    the network's input space; omit it when ``train_set`` is already
    standardized.  Returns the cleaned dataset (original row order kept) and
    the removed row indices in ascending order.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    n = len(train_set)
    k = math.ceil(fraction * n - 1e-9)
    if k >= n:
        raise DataError(f"removing {k} of {n} rows would empty the dataset")
    scores = _sigma_scores(net, train_set, standardizer)
    order = np.lexsort((np.arange(n), -scores))
    removed = np.sort(order[:k])
    keep = np.ones(n, dtype=bool)
    keep[removed] = False
    return train_set.subset(np.flatnonzero(keep)), removed


@dataclass
class CleaningResult:
    removed: np.ndarray
    fraction_removed: float
    before: Optional[EvalReport]
    after: Optional[EvalReport]
    before_net: Optional[Network] = field(default=None, repr=False)
    after_net: Optional[Network] = field(default=None, repr=False)
    cleaned: Optional[Dataset] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "removed_indices": [int(i) for i in self.removed],
            "n_removed": int(len(self.removed)),
            "fraction_removed": self.fraction_removed,
            "before": self.before.to_dict() if self.before else None,
            "after": self.after.to_dict() if self.after else None,
        }


def retrain_cleaned(
    net: Network,
    standardizer: Standardizer,
    cfg: TrainConfig,
    train_set: Dataset,
    val_set: Dataset,
    fraction: float = DEFAULT_CLEAN_FRACTION,
) -> CleaningResult:
    """Clean ``train_set`` with an already trained ``net`` and retrain from its spec's seed.

    ``standardizer`` is the one ``net`` was trained with; it is reused as is
    for the retrained model.
    """
    before = evaluate(net, val_set, standardizer)
    if fraction == 0:
        removed = np.array([], dtype=int)
        cleaned = train_set
    else:
        cleaned, removed = clean_dataset(net, train_set, fraction, standardizer)
    after_net, _ = train(Network.init(net.spec), standardizer.apply(cleaned), None, cfg)
    after = evaluate(after_net, val_set, standardizer)
    return CleaningResult(removed, len(removed) / len(train_set), before, after, net, after_net, cleaned)


def clean_and_retrain(
    spec: NetworkSpec,
    cfg: TrainConfig,
    train_set: Dataset,
    val_set: Dataset,
    fraction: float = DEFAULT_CLEAN_FRACTION,
) -> CleaningResult:
    """Train, drop the highest-sigma rows, retrain from the same init, compare on ``val_set``.

    The standardizer is fitted once on the full training set and reused for
    the retrained model, so the only difference between runs is the data.
    """
    spec = replace(spec, input_dim=train_set.n_features, output_dim=train_set.n_targets)
    st = fit_standardizer(train_set)
    before_net, _ = train(Network.init(spec), st.apply(train_set), None, cfg)
    return retrain_cleaned(before_net, st, cfg, train_set, val_set, fraction)
