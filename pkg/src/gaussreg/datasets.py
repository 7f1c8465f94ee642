"""CSV ingestion, standardization, splitting and synthetic generators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import rng
from .errors import DataError, NotFittedError


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    feature_names: Tuple[str, ...] = ()
    target_names: Tuple[str, ...] = ()
    provenance: str = ""
    rejected_rows: int = 0
    standardizer: Optional["Standardizer"] = None

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.targets, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise DataError(f"features {x.shape} and targets {y.shape} do not align")
        if x.shape[0] < 1:
            raise DataError("dataset has no rows")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains non-finite values")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "targets", y)
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"x{i}" for i in range(x.shape[1])))
        if not self.target_names:
            object.__setattr__(self, "target_names", tuple(f"y{i}" for i in range(y.shape[1])))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_targets(self) -> int:
        return self.targets.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return replace(self, features=self.features[index], targets=self.targets[index])

    def with_targets(self, targets) -> "Dataset":
        return replace(self, targets=targets)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(self.feature_names) + list(self.target_names))
            for xr, yr in zip(self.features, self.targets):
                writer.writerow([repr(float(v)) for v in xr] + [repr(float(v)) for v in yr])


def _read_rows(path) -> Tuple[List[str], List[List[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    except (UnicodeDecodeError, csv.Error) as exc:
        raise DataError(f"{path}: not a readable CSV file ({exc})") from None
    if not rows:
        raise DataError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    return header, rows[1:]


def read_header(path) -> List[str]:
    return _read_rows(path)[0]


def _parse_numeric(rows, header, columns, path):
    out = np.empty((len(rows), len(columns)))
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r + 2} has {len(row)} cells, header has {len(header)}")
        for j, c in enumerate(columns):
            cell = row[c].strip()
            try:
                out[r, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} at row {r + 2}, column {header[c]!r}") from None
    keep = np.all(np.isfinite(out), axis=1)
    return out[keep], int((~keep).sum()), keep


def load_csv(path, target_columns: Sequence[str], drop_columns: Sequence[str] = ()) -> Dataset:
    """Read a headered CSV; every column not targeted or dropped is a feature.

    Columns with an empty header (the row index R and pandas write) are
    skipped.  Rows with any non-finite numeric cell (``nan``, ``inf``) are
    rejected and counted in ``Dataset.rejected_rows``.
    """
    header, rows = _read_rows(path)
    if isinstance(target_columns, str):
        target_columns = [target_columns]
    for name in list(target_columns) + list(drop_columns):
        if name not in header:
            raise DataError(f"{path}: column {name!r} not found (have {header})")
    if not target_columns:
        raise DataError("at least one target column is required")
    t_idx = [header.index(n) for n in target_columns]
    f_idx = [i for i, h in enumerate(header) if h.strip() and h not in target_columns and h not in drop_columns]
    if not f_idx:
        raise DataError(f"{path}: no feature columns left")
    if not rows:
        raise DataError(f"{path}: no data rows")
    values, rejected, _ = _parse_numeric(rows, header, f_idx + t_idx, path)
    if values.shape[0] == 0:
        raise DataError(f"{path}: every row was rejected as non-finite")
    p = len(f_idx)
    return Dataset(
        values[:, :p],
        values[:, p:],
        tuple(header[i] for i in f_idx),
        tuple(header[i] for i in t_idx),
        provenance=str(path),
        rejected_rows=rejected,
    )


def load_series_csv(path) -> Tuple[np.ndarray, List[str]]:
    """Series file: a ``value`` column, optionally preceded by an opaque ``date`` column."""
    header, rows = _read_rows(path)
    if "value" in header:
        col = header.index("value")
    elif len(header) == 1:
        col = 0
    else:
        raise DataError(f"{path}: series file needs a 'value' column")
    labels = []
    if "date" in header:
        d = header.index("date")
        labels = [row[d] if d < len(row) else "" for row in rows]
    values, rejected, keep = _parse_numeric(rows, header, [col], path)
    if rejected:
        raise DataError(f"{path}: series contains {rejected} non-finite value(s)")
    if labels:
        labels = [lab for lab, k in zip(labels, keep) if k]
    return values[:, 0], labels


def write_series_csv(path, values, labels: Sequence[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if labels:
            writer.writerow(["date", "value"])
            writer.writerows([lab, repr(float(v))] for lab, v in zip(labels, values))
        else:
            writer.writerow(["value"])
            writer.writerows([repr(float(v))] for v in values)


# -- standardization ------------------------------------------------------------


def _column_stats(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = m.mean(axis=0)
    std = m.std(axis=0)
    # tolerance: a constant column can still show rounding-level spread
    flat = ~(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
    std = np.where(flat, 1.0, std)
    return mean, std, flat


@dataclass(eq=False)
class Standardizer:
    """Per-column z-scoring, fitted on a training split only.

    Zero-variance columns keep std 1 and are listed in ``*_flat``.
    """

    x_mean: Optional[np.ndarray] = None
    x_std: Optional[np.ndarray] = None
    y_mean: Optional[np.ndarray] = None
    y_std: Optional[np.ndarray] = None
    x_flat: Optional[np.ndarray] = field(default=None, repr=False)
    y_flat: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def fitted(self) -> bool:
        return self.x_mean is not None

    def fit(self, train: Dataset) -> "Standardizer":
        self.x_mean, self.x_std, self.x_flat = _column_stats(train.features)
        self.y_mean, self.y_std, self.y_flat = _column_stats(train.targets)
        return self

    def _require(self):
        if not self.fitted:
            raise NotFittedError("standardizer used before fit()")

    @property
    def target_scale(self) -> np.ndarray:
        self._require()
        return self.y_std.copy()

    def transform_features(self, x) -> np.ndarray:
        self._require()
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.x_mean.shape[0]:
            raise DataError(f"standardizer has {self.x_mean.shape[0]} feature columns, got {x.shape[-1]}")
        return (x - self.x_mean) / self.x_std

    def transform_targets(self, y) -> np.ndarray:
        self._require()
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != self.y_mean.shape[0]:
            raise DataError(f"standardizer has {self.y_mean.shape[0]} target columns, got {y.shape[-1]}")
        return (y - self.y_mean) / self.y_std

    def invert_features(self, x) -> np.ndarray:
        self._require()
        return np.asarray(x, dtype=np.float64) * self.x_std + self.x_mean

    def invert_targets(self, y) -> np.ndarray:
        self._require()
        return np.asarray(y, dtype=np.float64) * self.y_std + self.y_mean

    def apply(self, data: Dataset) -> Dataset:
        return replace(
            data,
            features=self.transform_features(data.features),
            targets=self.transform_targets(data.targets),
            standardizer=self,
        )

    def invert(self, data: Dataset) -> Dataset:
        return replace(
            data,
            features=self.invert_features(data.features),
            targets=self.invert_targets(data.targets),
            standardizer=None,
        )

    def to_dict(self) -> dict:
        self._require()
        return {
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean.tolist(),
            "y_std": self.y_std.tolist(),
            "x_flat": self.x_flat.tolist(),
            "y_flat": self.y_flat.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        arr = {k: np.array(v, dtype=float if "flat" not in k else bool) for k, v in d.items()}
        return cls(**arr)


def fit_standardizer(train: Dataset) -> Standardizer:
    return Standardizer().fit(train)


def random_split(data: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    n = len(data)
    if n < 2:
        raise DataError("need at least 2 rows to split")
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = min(max(1, int(math.floor(n * test_fraction + 0.5))), n - 1)
    perm = rng.stream(seed, "split").permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return data.subset(train_idx), data.subset(test_idx)


def split_indices(n: int, test_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    n_test = min(max(1, int(math.floor(n * test_fraction + 0.5))), n - 1)
    perm = rng.stream(seed, "split").permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# -- synthetic generators ---------------------------------------------------------


def hetero_mean(x):
    return np.sin(2.0 * np.asarray(x, dtype=np.float64))


def hetero_std(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.1 + 0.2 * x * x


def gen_heteroscedastic(n: int, seed: int = 0) -> Dataset:
    """x ~ U[-2, 2], y = sin(2x) + (0.1 + 0.2 x^2) * eps.

    The true conditional mean and std are :func:`hetero_mean` and
    :func:`hetero_std`.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = rng.stream(seed, "noise")
    x = gen.uniform(-2.0, 2.0, size=n)
    y = hetero_mean(x) + hetero_std(x) * gen.standard_normal(n)
    return Dataset(x[:, None], y[:, None], ("x",), ("y",), provenance=f"heteroscedastic(n={n}, seed={seed})")


def gen_constant_gaussian(n: int, mu_star: float = 0.0, sigma_star: float = 1.0, seed: int = 0) -> Dataset:
    if not sigma_star > 0:
        raise ValueError("sigma_star must be positive")
    gen = rng.stream(seed, "noise")
    y = mu_star + sigma_star * gen.standard_normal(n)
    return Dataset(
        np.ones((n, 1)),
        y[:, None],
        ("const",),
        ("y",),
        provenance=f"constant_gaussian(n={n}, mu={mu_star}, sigma={sigma_star}, seed={seed})",
    )


def gen_corrupted(base: Dataset, corrupt_fraction: float, seed: int = 0) -> Tuple[Dataset, np.ndarray]:
    """Overwrite the targets of a random subset of rows with other rows' targets.

    The chosen rows' targets are cyclically permuted among themselves in a
    shuffled order, so no chosen row keeps its own target and the target
    multiset is unchanged.  Returns the corrupted dataset and a boolean mask.
    """
    if not 0 <= corrupt_fraction < 1:
        raise ValueError("corrupt_fraction must lie in [0, 1)")
    n = len(base)
    k = int(math.floor(n * corrupt_fraction + 0.5))
    mask = np.zeros(n, dtype=bool)
    if k == 0:
        return base, mask
    gen = rng.stream(seed, "corrupt")
    chosen = gen.permutation(n)[:k]
    y = base.targets.copy()
    if k == 1:
        donor = gen.integers(0, n - 1)
        donor += donor >= chosen[0]
        y[chosen[0]] = base.targets[donor]
    else:
        y[chosen] = base.targets[np.roll(chosen, -1)]
    mask[chosen] = True
    note = f"{base.provenance} corrupted({corrupt_fraction}, seed={seed})"
    return replace(base, targets=y, provenance=note), mask


@dataclass(frozen=True)
class AnomalySeries:
    values: np.ndarray
    anomaly_indices: Tuple[int, ...]
    base_std: float
    shifts: Tuple[float, ...] = ()


def gen_series_with_anomalies(
    length: int,
    seed: int = 0,
    inject: bool = True,
    n_anomalies: Optional[int] = None,
    phi: float = 0.8,
    trend: float = 0.02,
    noise_std: float = 1.0,
    duration: int = 1,
) -> AnomalySeries:
    """AR(1) noise on a linear trend, with transient level shifts injected.

    ``base_std`` is the stationary std of the AR(1) component,
    ``noise_std / sqrt(1 - phi^2)``.  Each anomaly adds 6 to 10 ``base_std``
    (random sign) to ``duration`` consecutive values starting at the
    returned index.  Anomalies are 3 to 5 unless ``n_anomalies`` is given,
    kept clear of the first 15 steps and of each other.
    """
    if length <= 30:
        raise ValueError("length must exceed 30")
    gen = rng.stream(seed, "anomaly")
    t = np.arange(length, dtype=np.float64)
    ar = np.empty(length)
    base_std = noise_std / math.sqrt(1.0 - phi * phi)
    ar[0] = gen.normal(0.0, base_std)
    eps = gen.normal(0.0, noise_std, size=length)
    for i in range(1, length):
        ar[i] = phi * ar[i - 1] + eps[i]
    values = trend * t + ar

    if not inject:
        return AnomalySeries(values, (), base_std)
    k = int(gen.integers(3, 6)) if n_anomalies is None else int(n_anomalies)
    lo, hi = 15, length - duration
    gap = max(duration + 1, (hi - lo) // (2 * max(k, 1)))
    positions: List[int] = []
    for _ in range(10_000):
        if len(positions) == k:
            break
        cand = int(gen.integers(lo, hi))
        if all(abs(cand - p) >= gap for p in positions):
            positions.append(cand)
    if len(positions) < k:
        raise ValueError(f"cannot place {k} anomalies in a series of length {length}")
    positions.sort()
    shifts = []
    for p in positions:
        s = gen.uniform(6.0, 10.0) * base_std * (1.0 if gen.random() < 0.5 else -1.0)
        values[p:p + duration] += s
        shifts.append(float(s))
    return AnomalySeries(values, tuple(positions), base_std, tuple(shifts))
