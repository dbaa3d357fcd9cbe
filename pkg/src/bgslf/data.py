"""Multivariate time series I/O, normalization, differencing and windowing."""

from __future__ import annotations

import csv
import dataclasses
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

MTSB_MAGIC = b"MTSB1"
TRAIN_FRACTION = 0.7
VALID_FRACTION = 0.1


class DataError(ValueError):
    """Raised for malformed or unusable input series."""


@dataclass(frozen=True)
class MtsDataset:
    """A (T, N, D) series with its observation mask and chronological splits.

    ``mask`` is True where a value was observed.  ``mean``/``std`` are per
    feature and are only set once :func:`zscore_fit_apply` has run.
    """

    values: np.ndarray
    mask: np.ndarray
    node_ids: tuple[str, ...] = ()
    sample_rate: str | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    normalized: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.values.ndim != 3:
            raise DataError(f"values must be (T, N, D), got shape {self.values.shape}")
        if self.mask.shape != self.values.shape:
            raise DataError(f"mask shape {self.mask.shape} != values shape {self.values.shape}")

    @property
    def num_steps(self) -> int:
        return self.values.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def num_features(self) -> int:
        return self.values.shape[2]

    @property
    def splits(self) -> dict[str, tuple[int, int]]:
        return split_bounds(self.num_steps)

    def split(self, name: str) -> slice:
        start, stop = self.splits[name]
        return slice(start, stop)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean

    def with_stats(self, mean, std) -> "MtsDataset":
        """Normalize with externally supplied statistics (e.g. from a checkpoint)."""
        mean = np.asarray(mean, dtype=np.float64)
        std = np.asarray(std, dtype=np.float64)
        norm = np.where(self.mask, (self.values - mean) / std, 0.0)
        return dataclasses.replace(self, mean=mean, std=std, normalized=norm)


def split_bounds(num_steps: int) -> dict[str, tuple[int, int]]:
    n_train = int(math.floor(num_steps * TRAIN_FRACTION))
    n_valid = int(math.floor(num_steps * VALID_FRACTION))
    return {
        "train": (0, n_train),
        "valid": (n_train, n_train + n_valid),
        "test": (n_train + n_valid, num_steps),
    }


def _build(values: np.ndarray, zero_is_missing: bool, node_ids=(), **meta) -> MtsDataset:
    values = np.asarray(values, dtype=np.float64)
    mask = np.isfinite(values)
    if zero_is_missing:
        mask &= values != 0.0
    values = np.where(mask, values, 0.0)
    return MtsDataset(values=values, mask=mask, node_ids=tuple(node_ids), **meta)


def from_array(values, zero_is_missing: bool = False, node_ids=()) -> MtsDataset:
    """Wrap an in-memory (T, N) or (T, N, D) array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return _build(arr, zero_is_missing, node_ids)


def read_csv(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    out = np.empty((len(rows) - 1, len(header)), dtype=np.float64)
    for t, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise DataError(f"{path}: row {t + 2} has {len(row)} cells, header has {len(header)}")
        for n, cell in enumerate(row):
            cell = cell.strip()
            if cell == "" or cell.lower() == "nan":
                out[t, n] = np.nan
                continue
            try:
                out[t, n] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} at row {t + 2}, column {n + 1}") from None
    return out[:, :, None], header


def read_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:5] != MTSB_MAGIC:
        raise DataError(f"{path}: bad magic, expected {MTSB_MAGIC!r}")
    if len(raw) < 17:
        raise DataError(f"{path}: truncated header")
    t, n, d = struct.unpack("<III", raw[5:17])
    count = t * n * d
    body = raw[17:]
    if len(body) != 4 * count:
        raise DataError(f"{path}: expected {count} float32 values for shape {(t, n, d)}, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(t, n, d)


def write_binary(path, values) -> None:
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    t, n, d = arr.shape
    Path(path).write_bytes(MTSB_MAGIC + struct.pack("<III", t, n, d) + arr.tobytes(order="C"))


def write_csv(path, values, node_ids=None) -> None:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise DataError("CSV holds a single feature per node")
        arr = arr[:, :, 0]
    ids = node_ids or [f"s{i}" for i in range(arr.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(ids)
        for row in arr:
            w.writerow(["nan" if not np.isfinite(v) else repr(float(v)) for v in row])


def load(path, format: str | None = None, zero_is_missing: bool = False,
         input_len: int = 12, output_len: int = 12) -> MtsDataset:
    """Read a CSV or MTSB1 binary file.

    ``format`` is ``"csv"`` or ``"binary"``; when omitted it is guessed from the
    suffix (``.csv`` means CSV, anything else binary).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "binary")
    if fmt == "csv":
        values, ids = read_csv(path)
    elif fmt == "binary":
        values = read_binary(path)
        ids = [f"s{i}" for i in range(values.shape[1])]
    else:
        raise DataError(f"unknown format {fmt!r}")
    ds = _build(values, zero_is_missing, ids)
    if ds.num_steps < input_len + output_len:
        raise DataError(
            f"{path}: {ds.num_steps} timesteps is shorter than one window "
            f"({input_len} in + {output_len} out)"
        )
    return ds


def zscore_fit_apply(ds: MtsDataset) -> MtsDataset:
    """Fit per-feature mean/std on observed training cells and normalize every split."""
    train = ds.split("train")
    vals, mask = ds.values[train], ds.mask[train]
    if not mask.any():
        raise DataError("training split has no observed values")
    d = ds.num_features
    mean = np.empty(d)
    std = np.empty(d)
    for j in range(d):
        obs = vals[:, :, j][mask[:, :, j]]
        if obs.size == 0:
            raise DataError(f"feature {j} has no observed training values")
        mean[j] = obs.mean()
        std[j] = obs.std()
        if std[j] < 1e-8:
            raise DataError(f"feature {j} is constant on the training split (std={std[j]:.3g}); remove it")
    return ds.with_stats(mean, std)


def diff(series: np.ndarray, mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """First difference along time; a step touching a missing cell is masked."""
    series = np.asarray(series)
    if series.shape[0] < 2:
        raise DataError(f"diff needs at least 2 timesteps, got {series.shape[0]}")
    out = series[1:] - series[:-1]
    if mask is None:
        dmask = np.ones(out.shape, dtype=bool)
    else:
        dmask = mask[1:] & mask[:-1]
        out = np.where(dmask, out, 0.0)
    return out, dmask


@dataclass(frozen=True)
class SegmentTensor:
    values: np.ndarray  # (S, N, D, P)
    period: int

    @property
    def count(self) -> int:
        return self.values.shape[0]


def segment(diffed: np.ndarray, period: int) -> SegmentTensor:
    """Cut a (T', N, D) series into floor(T'/P) leading segments laid out (S, N, D, P)."""
    if period < 1:
        raise DataError(f"period must be >= 1, got {period}")
    steps = diffed.shape[0]
    if steps < period:
        raise DataError(f"series of {steps} steps is shorter than period {period}; use a smaller period")
    s = steps // period
    n, d = diffed.shape[1:]
    blocks = diffed[: s * period].reshape(s, period, n, d)
    return SegmentTensor(values=np.ascontiguousarray(blocks.transpose(0, 2, 3, 1)), period=period)


def graph_segments(ds: MtsDataset, period: int) -> SegmentTensor:
    """Normalized training split, differenced then segmented: the graph learner's input."""
    if ds.normalized is None:
        raise DataError("dataset must be normalized first")
    tr = ds.split("train")
    diffed, _ = diff(ds.normalized[tr], ds.mask[tr])
    return segment(diffed, period)


@dataclass
class SampleBatch:
    inputs: np.ndarray       # (B, T_in, N, D)
    targets: np.ndarray      # (B, T_out, N, D)
    mask: np.ndarray         # (B, T_out, N, D)
    starts: np.ndarray       # absolute index of each window's first input step


def window_starts(ds: MtsDataset, split: str, input_len: int = 12, output_len: int = 12) -> np.ndarray:
    start, stop = ds.splits[split]
    span = input_len + output_len
    if stop - start < span:
        return np.empty(0, dtype=np.int64)
    return np.arange(start, stop - span + 1, dtype=np.int64)


def gather(ds: MtsDataset, starts: np.ndarray, input_len: int = 12, output_len: int = 12) -> SampleBatch:
    src = ds.normalized
    if src is None:
        raise DataError("dataset must be normalized first")
    idx_in = starts[:, None] + np.arange(input_len)
    idx_out = starts[:, None] + input_len + np.arange(output_len)
    return SampleBatch(
        inputs=src[idx_in],
        targets=src[idx_out],
        mask=ds.mask[idx_out],
        starts=np.asarray(starts),
    )


def window(ds: MtsDataset, input_len: int = 12, output_len: int = 12, split: str = "train",
           batch_size: int = 64, order: np.ndarray | None = None) -> Iterator[SampleBatch]:
    """Stride-1 windows lying wholly inside ``split``, in batches; the last batch may be short.

    ``order`` optionally permutes the windows (used for shuffled training).
    """
    starts = window_starts(ds, split, input_len, output_len)
    if order is not None:
        starts = starts[order]
    for i in range(0, len(starts), batch_size):
        yield gather(ds, starts[i:i + batch_size], input_len, output_len)
