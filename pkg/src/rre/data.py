"""Series loading, min-max scaling, chronological splits and sliding windows."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from rre.errors import ParseError, SchemaError, ShapeError, SplitError
from rre.numerics.rng import Rng


@dataclass
class RawSeries:
    """A multivariate series, one row per time step (oldest first)."""

    values: np.ndarray
    names: list[str]
    target: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise ShapeError("values must be (N_steps, len(names))")
        if not 0 <= self.target < len(self.names):
            raise SchemaError(f"target index {self.target} out of range")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    @property
    def target_name(self) -> str:
        return self.names[self.target]


def load_csv(path, target: str) -> RawSeries:
    """Read a comma-separated file whose first row holds the variable names.

    Rows are numbered from 1 for the first data row, matching what a user sees
    below the header.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if target not in header:
            raise SchemaError(f"{path}: target column {target!r} not in header {header}")
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(i, "<row>", ",".join(row))
            parsed = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(i, name, cell) from None
                if not math.isfinite(v):
                    raise ParseError(i, name, cell)
                parsed.append(v)
            rows.append(parsed)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return RawSeries(values, header, header.index(target))


def write_csv(path, series: RawSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(series.names)
        for row in series.values:
            w.writerow([repr(float(v)) for v in row])


@dataclass
class Scaler:
    """Per-variable affine map sending the training min to -1 and max to +1."""

    min: np.ndarray
    max: np.ndarray

    def transform(self, x) -> np.ndarray:
        return transform(self, x)

    def inverse_transform(self, x) -> np.ndarray:
        return inverse_transform(self, x)

    def inverse_column(self, x, column: int) -> np.ndarray:
        """Inverse-transform values that all belong to variable ``column``."""
        lo, hi = self.min[column], self.max[column]
        x = np.asarray(x, dtype=np.float64)
        if hi == lo:
            return np.full_like(x, lo)
        return (x + 1.0) * 0.5 * (hi - lo) + lo

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["min"], float), np.asarray(d["max"], float))


def fit_scaler(train_rows) -> Scaler:
    x = np.asarray(train_rows, dtype=np.float64)
    return Scaler(x.min(axis=0), x.max(axis=0))


def transform(scaler: Scaler, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    span = scaler.max - scaler.min
    const = span == 0
    safe = np.where(const, 1.0, span)
    out = 2.0 * (x - scaler.min) / safe - 1.0
    # constant training columns map to 0
    return np.where(const, 0.0, out)


def inverse_transform(scaler: Scaler, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    span = scaler.max - scaler.min
    out = (x + 1.0) * 0.5 * span + scaler.min
    return np.where(span == 0, scaler.min, out)


def split_bounds(n: int, ratios: Sequence[float] = (0.7, 0.1, 0.2)) -> tuple[int, int]:
    fr = [Fraction(str(r)) for r in ratios]
    if len(fr) != 3 or sum(fr) != 1:
        raise SplitError(f"ratios must be three numbers summing to 1, got {ratios}")
    return math.floor(n * fr[0]), math.floor(n * (fr[0] + fr[1]))


def chronological_split(series, ratios=(0.7, 0.1, 0.2), min_len: int = 0):
    """Contiguous train/validation/test segments (rows as numpy arrays).

    ``min_len`` is usually ``T + H``; a shorter segment raises SplitError.
    """
    values = series.values if isinstance(series, RawSeries) else np.asarray(series, float)
    n = values.shape[0]
    a, b = split_bounds(n, ratios)
    parts = values[:a], values[a:b], values[b:]
    for label, part in zip(("train", "validation", "test"), parts):
        if part.shape[0] < min_len:
            raise SplitError(
                f"{label} segment has {part.shape[0]} rows, needs at least {min_len}"
            )
    return parts


@dataclass
class WindowedExample:
    """One supervision pair: ``X`` is (T, D_in), ``Y_all`` is (T, H)."""

    X: np.ndarray
    Y_all: np.ndarray

    @property
    def Y_T(self) -> np.ndarray:
        return self.Y_all[-1]


def make_windows(segment, T: int, H: int, target: int) -> list[WindowedExample]:
    X, Y = window_arrays(segment, T, H, target)
    return [WindowedExample(x, y) for x, y in zip(X, Y)]


def window_arrays(segment, T: int, H: int, target: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked windows: ``X`` (N, T, D_in) and ``Y_all`` (N, T, H)."""
    seg = np.asarray(segment, dtype=np.float64)
    n = seg.shape[0] - T - H + 1
    if n < 1:
        raise SplitError(f"segment of length {seg.shape[0]} too short for T={T}, H={H}")
    starts = np.arange(n)
    X = seg[starts[:, None] + np.arange(T)[None, :]]
    # Y_all[s, t, j] = target at absolute row s + t + 1 + j
    idx = starts[:, None, None] + np.arange(T)[None, :, None] + 1 + np.arange(H)[None, None, :]
    Y = seg[idx, target]
    return X, Y


def mse_mae(pred, truth) -> tuple[float, float]:
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"prediction shape {p.shape} != truth shape {y.shape}")
    d = p - y
    return float(np.mean(d * d)), float(np.mean(np.abs(d)))


@dataclass
class Dataset:
    """Scaled, windowed train/validation/test arrays ready for training."""

    series: RawSeries
    scaler: Scaler
    T: int
    H: int
    train: tuple[np.ndarray, np.ndarray]
    val: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def target(self) -> int:
        return self.series.target

    @property
    def d_in(self) -> int:
        return self.series.n_vars

    def to_original(self, y_scaled) -> np.ndarray:
        return self.scaler.inverse_column(y_scaled, self.target)


def prepare(series: RawSeries, T: int, H: int, ratios=(0.7, 0.1, 0.2)) -> Dataset:
    """Split, fit the scaler on train only, scale, then window each split."""
    train, val, test = chronological_split(series, ratios, min_len=T + H)
    scaler = fit_scaler(train)
    parts = [window_arrays(transform(scaler, p), T, H, series.target) for p in (train, val, test)]
    return Dataset(series, scaler, T, H, *parts)


def synthetic_series(
    steps: int = 2000,
    noise_frac: float = 0.15,
    seed: int = 0,
    n_noise_vars: int = 2,
    lag: int = 3,
) -> RawSeries:
    """Seasonal target driven by a lagged exogenous variable, plus distractors.

    Columns: ``target``, ``driver`` and ``noise1..noise{n}``. The target is a
    sum of two sinusoids, a slow trend and ``0.6 * driver[t - lag]``. A
    ``noise_frac`` share of time steps are pure-noise steps: every input
    variable except the target is overwritten with a large random draw there,
    so those rows carry no information about the future.
    """
    rng = Rng(seed).spawn("synth")
    t = np.arange(steps + lag, dtype=np.float64)
    shocks = rng.normal(0.0, 0.3, size=steps + lag)
    driver = np.zeros(steps + lag)
    for i in range(1, steps + lag):
        driver[i] = 0.85 * driver[i - 1] + shocks[i]
    season = np.sin(2 * np.pi * t / 24.0) + 0.5 * np.sin(2 * np.pi * t / 61.0)
    trend = 0.0004 * t
    target = season + trend + 0.6 * np.roll(driver, lag) + rng.normal(0.0, 0.05, size=steps + lag)
    target, driver = target[lag:], driver[lag:]
    cols = [target, driver.copy()]
    for _ in range(n_noise_vars):
        cols.append(rng.normal(0.0, 1.0, size=steps))
    values = np.stack(cols, axis=1)
    noisy = rng.uniform(size=steps) < noise_frac
    n_noisy = int(noisy.sum())
    if n_noisy:
        values[noisy, 1:] = rng.normal(0.0, 4.0, size=(n_noisy, values.shape[1] - 1))
    names = ["target", "driver"] + [f"noise{i + 1}" for i in range(n_noise_vars)]
    return RawSeries(values, names, 0)
