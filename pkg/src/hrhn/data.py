"""Datasets, sliding windows, z-score normalization and synthetic generators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SPLITS = ("train", "validation", "test")

# train / validation / test rows for the NASDAQ 100 file (81 stocks + index)
NASDAQ_SPLITS = (35100, 2730, 2730)
NASDAQ_N, NASDAQ_D = 81, 1


class DataError(ValueError):
    pass


@dataclass
class SeriesDataset:
    exogenous: np.ndarray  # [M, n]
    targets: np.ndarray  # [M, d]
    feature_names: list[str] = field(default_factory=list)
    bounds: tuple[int, int, int] | None = None  # end index of train, validation, test
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.exogenous = np.asarray(self.exogenous, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.exogenous.ndim != 2 or self.targets.ndim != 2:
            raise DataError("exogenous and targets must be 2-D [M, n] / [M, d]")
        if len(self.exogenous) != len(self.targets):
            raise DataError(f"exogenous has {len(self.exogenous)} rows, targets {len(self.targets)}")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.n)] + [f"y{i}" for i in range(self.d)]
        if self.bounds is not None:
            a, b, c = self.bounds
            if not 0 <= a <= b <= c <= len(self):
                raise DataError(f"split bounds {self.bounds} invalid for {len(self)} rows")

    def __len__(self):
        return len(self.targets)

    @property
    def n(self) -> int:
        return self.exogenous.shape[1]

    @property
    def d(self) -> int:
        return self.targets.shape[1]

    def with_splits(self, train: int, validation: int, test: int | None = None) -> "SeriesDataset":
        """Contiguous time-ordered splits; ``test`` defaults to the remaining rows."""
        if test is None:
            test = len(self) - train - validation
        if min(train, validation, test) < 0 or train + validation + test > len(self):
            raise DataError(f"splits {train}/{validation}/{test} do not fit {len(self)} rows")
        return replace(self, bounds=(train, train + validation, train + validation + test))

    def with_fractions(self, train: float = 0.7, validation: float = 0.15) -> "SeriesDataset":
        a = int(round(len(self) * train))
        b = int(round(len(self) * validation))
        return self.with_splits(a, b)

    def split_range(self, name: str) -> tuple[int, int]:
        if self.bounds is None:
            raise DataError("dataset has no split boundaries")
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}; expected one of {SPLITS}")
        edges = (0,) + tuple(self.bounds)
        i = SPLITS.index(name)
        return edges[i], edges[i + 1]

    def part(self, name: str) -> "SeriesDataset":
        lo, hi = self.split_range(name)
        return SeriesDataset(self.exogenous[lo:hi], self.targets[lo:hi], list(self.feature_names), None, {})


# ---------------------------------------------------------------- loading


def load_csv(path, n: int, d: int) -> SeriesDataset:
    """Read a headed CSV whose first ``n`` columns are exogenous and next ``d`` are targets."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) != n + d:
            raise DataError(f"{path}: header has {len(header)} columns, expected n+d = {n}+{d} = {n + d}")
        rows = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != n + d:
                raise DataError(f"{path}: row {row_no} has {len(row)} cells, expected {n + d}")
            values = []
            for col_no, cell in enumerate(row, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell {cell!r} at row {row_no}, column {col_no} ({header[col_no - 1]})"
                    ) from None
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    if not np.isfinite(arr).all():
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise DataError(f"{path}: non-finite value at row {bad[0] + 1}, column {bad[1] + 1}")
    return SeriesDataset(arr[:, :n], arr[:, n:], header)


def save_csv(dataset: SeriesDataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.feature_names)
        for row in np.hstack([dataset.exogenous, dataset.targets]):
            writer.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------- windows


@dataclass
class Window:
    x: np.ndarray  # [T-1, n]
    y: np.ndarray  # [T-1, d]
    target: np.ndarray  # [d]


@dataclass
class Windows:
    """A batch of windows stored as stacked arrays; indexes to :class:`Window`."""

    x: np.ndarray  # [N, T-1, n]
    y: np.ndarray  # [N, T-1, d]
    target: np.ndarray  # [N, d]
    start: np.ndarray  # [N] row index of each window's first input row

    def __len__(self):
        return len(self.target)

    def __getitem__(self, i) -> Window:
        return Window(self.x[i], self.y[i], self.target[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "Windows":
        return Windows(self.x[idx], self.y[idx], self.target[idx], self.start[idx])

    @property
    def T(self) -> int:
        return self.x.shape[1] + 1

    @classmethod
    def from_windows(cls, windows) -> "Windows":
        windows = list(windows)
        return cls(
            np.stack([w.x for w in windows]),
            np.stack([w.y for w in windows]),
            np.stack([w.target for w in windows]),
            np.arange(len(windows)),
        )


def window_count(length: int, T: int) -> int:
    return length - T + 1


def make_windows(dataset: SeriesDataset, T: int, split: str | None = None) -> Windows:
    """Stride-1 windows; window j reads rows j..j+T-2 and predicts row j+T-1.

    With ``split`` given, windows stay inside that split.
    """
    if T < 2:
        raise DataError(f"window size T must be >= 2, got {T}")
    lo, hi = (0, len(dataset)) if split is None else dataset.split_range(split)
    length = hi - lo
    if length < T:
        where = f"split {split!r}" if split else "dataset"
        raise DataError(f"{where} has length {length}, shorter than window size T={T}")
    exo = dataset.exogenous[lo:hi]
    tgt = dataset.targets[lo:hi]
    xw = np.moveaxis(sliding_window_view(exo, T, axis=0), -1, 1)  # [N, T, n]
    yw = np.moveaxis(sliding_window_view(tgt, T, axis=0), -1, 1)
    return Windows(
        np.ascontiguousarray(xw[:, :-1]),
        np.ascontiguousarray(yw[:, :-1]),
        np.ascontiguousarray(yw[:, -1]),
        np.arange(lo, hi - T + 1),
    )


# ---------------------------------------------------------------- normalization


@dataclass
class NormalizationStats:
    exo_mean: np.ndarray
    exo_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    @property
    def exo_constant(self) -> np.ndarray:
        return self.exo_std == 0

    @property
    def target_constant(self) -> np.ndarray:
        return self.target_std == 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("exo_mean", "exo_std", "target_mean", "target_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("exo_mean", "exo_std", "target_mean", "target_std")))

    @classmethod
    def identity(cls, n: int, d: int) -> "NormalizationStats":
        return cls(np.zeros(n), np.ones(n), np.zeros(d), np.ones(d))


def _zscore(values, mean, std):
    safe = np.where(std == 0, 1.0, std)
    out = (values - mean) / safe
    out[..., std == 0] = 0.0
    return out


def compute_stats(dataset: SeriesDataset) -> NormalizationStats:
    lo, hi = dataset.split_range("train") if dataset.bounds is not None else (0, len(dataset))
    if hi <= lo:
        raise DataError("training split is empty")
    exo, tgt = dataset.exogenous[lo:hi], dataset.targets[lo:hi]
    return NormalizationStats(exo.mean(axis=0), exo.std(axis=0), tgt.mean(axis=0), tgt.std(axis=0))


def normalize(dataset: SeriesDataset, stats: NormalizationStats | None = None):
    """Z-score every column with training-split statistics; constant columns become 0."""
    if stats is None:
        stats = compute_stats(dataset)
    out = replace(
        dataset,
        exogenous=_zscore(dataset.exogenous, stats.exo_mean, stats.exo_std),
        targets=_zscore(dataset.targets, stats.target_mean, stats.target_std),
    )
    return out, stats


def denormalize(predictions, stats: NormalizationStats) -> np.ndarray:
    return np.asarray(predictions, dtype=np.float64) * stats.target_std + stats.target_mean


# ---------------------------------------------------------------- synthetic data

SYNTHETIC_KINDS = ("linear_exo", "regime_switch")


def _ar1(rng, length, width, phi=0.95):
    out = np.empty((length, width))
    out[0] = rng.standard_normal(width)
    scale = np.sqrt(1.0 - phi * phi)
    for t in range(1, length):
        out[t] = phi * out[t - 1] + scale * rng.standard_normal(width)
    return out


def _linear_exo(length, rng, n=4, d=1, noise=0.01, lags=(1,)):
    lags = tuple(int(l) for l in lags)
    lag_max = max(lags)
    drivers = _ar1(rng, length + lag_max, n)
    coef = rng.standard_normal((len(lags), d, n)) / np.sqrt(n * len(lags))
    targets = np.zeros((length, d))
    for j, lag in enumerate(lags):
        targets += drivers[lag_max - lag : lag_max - lag + length] @ coef[j].T
    targets += noise * rng.standard_normal((length, d))
    meta = {"kind": "linear_exo", "lags": list(lags), "coefficients": coef.tolist(), "noise": noise}
    return SeriesDataset(drivers[lag_max:], targets, meta=meta)


def _switch_times(rng, length, n_switches):
    margin = max(2, length // (4 * (n_switches + 1)))
    edges = np.linspace(margin, length - margin, n_switches + 1).astype(int)
    return np.array([rng.integers(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])], dtype=int)


def _regime_switch(length, rng, n=8, d=1, noise=0.02, n_switches=5, period=6.0, amplitude=1.5):
    if n < 3:
        raise DataError("regime_switch needs n >= 3 (drivers plus the switch marker)")
    if n_switches < 1:
        raise DataError("regime_switch needs at least one switch")
    width = n - 1
    drivers = _ar1(rng, length + 1, width, phi=0.9)
    switches = _switch_times(rng, length, n_switches)
    regime = np.searchsorted(switches, np.arange(length), side="right")  # regime id at each row
    bursty = (regime % 2) == 1
    levels = rng.uniform(-1.5, 1.5, size=(n_switches + 1, d))

    # local interactions between neighbouring driver components
    lagged = drivers[:length]
    spread = np.maximum(lagged[:, :-1] - lagged[:, 1:], 0.0)
    mix = rng.standard_normal((d, width - 1)) / np.sqrt(width - 1)
    base = spread @ mix.T + 0.5 * lagged[:, :d]
    phase = 2 * np.pi * np.arange(length) / period
    osc = amplitude * np.sin(phase)[:, None] * (1.0 + 0.5 * np.tanh(lagged[:, -1:]))
    targets = base + levels[regime] + bursty[:, None] * osc + noise * rng.standard_normal((length, d))

    marker = np.zeros((length, 1))
    marker[switches - 1, 0] = 1.0
    exo = np.hstack([drivers[1 : length + 1], marker])
    meta = {"kind": "regime_switch", "switch_times": switches.tolist(), "marker_column": n - 1}
    return SeriesDataset(exo, targets, meta=meta)


def gen_synthetic(kind: str, length: int, seed: int, **options) -> SeriesDataset:
    """Deterministic synthetic dataset of the given ``kind``.

    ``linear_exo``: targets are a fixed linear map of lagged AR(1) drivers plus noise.
    ``regime_switch``: alternating smooth and oscillatory regimes with level jumps;
    the last exogenous column is 1 one step before each switch.
    """
    if kind not in SYNTHETIC_KINDS:
        raise DataError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if length < 100:
        raise DataError(f"synthetic length must be >= 100, got {length}")
    rng = np.random.default_rng(seed)
    if kind == "linear_exo":
        return _linear_exo(length, rng, **options)
    return _regime_switch(length, rng, **options)
