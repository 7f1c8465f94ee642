"""Held-out metrics and the repeated random-split benchmark protocol."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datasets import Dataset, Standardizer, fit_standardizer, random_split
from .errors import DataError, TrainingAbort
from .gauss_head import GaussianPrediction, confidence_interval, nll_batch, nll_rescale
from .network import Network, NetworkSpec
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

COVERAGE_KS = (1.0, 2.0, 3.0)


@dataclass
class EvalReport:
    mean_nll: Optional[float]
    rmse: float
    mae: float
    coverage: Dict[float, float] = field(default_factory=dict)
    n_samples: int = 0

    def __post_init__(self):
        if self.rmse < 0 or self.mae < 0:
            raise ValueError("rmse and mae must be non-negative")
        if any(not 0.0 <= c <= 1.0 for c in self.coverage.values()):
            raise ValueError("coverage fractions must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "mean_nll": self.mean_nll,
            "rmse": self.rmse,
            "mae": self.mae,
            "coverage": {f"{k:g}": v for k, v in sorted(self.coverage.items())},
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        cov = {float(k): float(v) for k, v in d.get("coverage", {}).items()}
        return cls(d["mean_nll"], d["rmse"], d["mae"], cov, d["n_samples"])


def coverage(pred: GaussianPrediction, y, k: float) -> float:
    """Fraction of target entries inside mu +/- k sigma."""
    return float(confidence_interval(pred, k).contains(y).mean())


def point_metrics(mu, y) -> Tuple[float, float]:
    err = np.asarray(y, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    return float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err)))


def evaluate(net: Network, test: Dataset, standardizer: Standardizer, ks: Sequence[float] = COVERAGE_KS) -> EvalReport:
    """Metrics in original target units.

    The NLL is computed against standardized targets and shifted by
    ``sum(log target_std)``, which is exact for an affine rescaling.
    """
    if not standardizer.fitted:
        raise DataError("evaluate needs a fitted standardizer")
    if standardizer.x_mean.shape[0] != test.n_features or standardizer.y_mean.shape[0] != test.n_targets:
        raise DataError(
            f"standardizer is {standardizer.x_mean.shape[0]}->{standardizer.y_mean.shape[0]} columns, "
            f"test set is {test.n_features}->{test.n_targets}"
        )
    x = standardizer.transform_features(test.features)
    if net.spec.head == "point":
        mu = standardizer.invert_targets(net.predict_mean(x))
        rmse, mae = point_metrics(mu, test.targets)
        return EvalReport(None, rmse, mae, {}, len(test))
    pred_std = net.predict(x)
    nll = nll_rescale(nll_batch(pred_std, standardizer.transform_targets(test.targets)), standardizer.target_scale)
    pred = pred_std.affine(standardizer.y_mean, standardizer.y_std)
    rmse, mae = point_metrics(pred.mu, test.targets)
    cov = {float(k): coverage(pred, test.targets, k) for k in ks}
    return EvalReport(nll, rmse, mae, cov, len(test))


# -- benchmark ------------------------------------------------------------------


def mean_std(values: Sequence[float]) -> Tuple[Optional[float], Optional[float]]:
    """Mean and sample (n-1) std; std is None for fewer than two values."""
    if not values:
        return None, None
    arr = np.array(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else None
    return mean, std


@dataclass
class SplitRecord:
    split: int
    seed: int
    report: Optional[EvalReport] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.report is not None

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "seed": self.seed,
            "status": "ok" if self.ok else "failed",
            "report": self.report.to_dict() if self.ok else None,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitRecord":
        rep = EvalReport.from_dict(d["report"]) if d.get("report") else None
        return cls(d["split"], d["seed"], rep, d.get("error"))


@dataclass
class BenchmarkResult:
    splits: List[SplitRecord]
    test_fraction: float = 0.1

    @property
    def succeeded(self) -> List[SplitRecord]:
        return [s for s in self.splits if s.ok]

    @property
    def n_failed(self) -> int:
        return len(self.splits) - len(self.succeeded)

    def aggregate(self) -> dict:
        ok = self.succeeded
        nll_mean, nll_std = mean_std([s.report.mean_nll for s in ok if s.report.mean_nll is not None])
        rmse_mean, rmse_std = mean_std([s.report.rmse for s in ok])
        mae_mean, mae_std = mean_std([s.report.mae for s in ok])
        return {
            "n_splits": len(self.splits),
            "n_failed": self.n_failed,
            "nll_mean": nll_mean,
            "nll_std": nll_std,
            "rmse_mean": rmse_mean,
            "rmse_std": rmse_std,
            "mae_mean": mae_mean,
            "mae_std": mae_std,
        }

    def to_dict(self) -> dict:
        return {
            "test_fraction": self.test_fraction,
            "splits": [s.to_dict() for s in self.splits],
            "aggregate": self.aggregate(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkResult":
        return cls([SplitRecord.from_dict(s) for s in d["splits"]], d.get("test_fraction", 0.1))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["split", "seed", "status", "nll", "rmse", "mae", "cov_k1", "cov_k2", "cov_k3", "n_samples"])
            for s in self.splits:
                if s.ok:
                    r = s.report
                    cov = [repr(r.coverage.get(k, float("nan"))) for k in COVERAGE_KS]
                    w.writerow([s.split, s.seed, "ok", repr(r.mean_nll), repr(r.rmse), repr(r.mae), *cov, r.n_samples])
                else:
                    w.writerow([s.split, s.seed, "failed", "", "", "", "", "", "", ""])


def fit_and_evaluate(spec: NetworkSpec, cfg: TrainConfig, train_set: Dataset, test_set: Dataset):
    """Standardize on ``train_set``, train a fresh network, evaluate on ``test_set``."""
    st = fit_standardizer(train_set)
    net = Network.init(spec)
    net, history = train(net, st.apply(train_set), None, cfg)
    return net, st, history, evaluate(net, test_set, st)


def _run_split(args) -> SplitRecord:
    data, i, seed, test_fraction, spec, cfg = args
    train_set, test_set = random_split(data, test_fraction, seed)
    try:
        _, _, _, report = fit_and_evaluate(replace(spec, seed=spec.seed + i), replace(cfg, seed=cfg.seed + i), train_set, test_set)
    except TrainingAbort as exc:
        log.warning("split %d failed: %s", i, exc)
        return SplitRecord(i, seed, None, str(exc))
    return SplitRecord(i, seed, report)


def run_benchmark(
    data: Dataset,
    n_splits: int = 20,
    test_fraction: float = 0.1,
    cfg: TrainConfig = TrainConfig(),
    spec: Optional[NetworkSpec] = None,
    seed: int = 0,
    workers: int = 1,
) -> BenchmarkResult:
    """Repeated random train/test splits; split ``i`` uses seed ``seed + i``.

    Splits whose training aborts on a non-finite loss are kept as failed
    records and left out of the aggregate.
    """
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    spec = spec or NetworkSpec(input_dim=data.n_features)
    spec = replace(spec, input_dim=data.n_features, output_dim=data.n_targets)
    jobs = [(data, i, seed + i, test_fraction, spec, cfg) for i in range(n_splits)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_split, jobs))
    else:
        records = [_run_split(j) for j in jobs]
    return BenchmarkResult(records, test_fraction)
