"""Masked error metrics.  Mask entries are True where the target was observed."""

from __future__ import annotations

import warnings

import numpy as np

from .tensor import Tensor, tabs, tsum

MAPE_FLOOR = 1e-4


class EmptyMaskWarning(RuntimeWarning):
    """Every target cell was masked; the metric is reported as 0."""


def _prep(pred, target, mask):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {pred.shape} != target shape {target.shape}")
    mask = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return pred, target, mask


def _empty(name):
    warnings.warn(f"{name}: mask is empty", EmptyMaskWarning, stacklevel=3)
    return 0.0


def masked_mae(pred, target, mask=None) -> float:
    pred, target, mask = _prep(pred, target, mask)
    if not mask.any():
        return _empty("masked_mae")
    return float(np.abs(pred - target)[mask].mean())


def masked_rmse(pred, target, mask=None) -> float:
    pred, target, mask = _prep(pred, target, mask)
    if not mask.any():
        return _empty("masked_rmse")
    return float(np.sqrt(((pred - target) ** 2)[mask].mean()))


def masked_mape(pred, target, mask=None) -> float:
    """Percent error; targets with magnitude below 1e-4 are skipped."""
    pred, target, mask = _prep(pred, target, mask)
    mask = mask & (np.abs(target) >= MAPE_FLOOR)
    if not mask.any():
        return _empty("masked_mape")
    return float((np.abs(pred - target)[mask] / np.abs(target)[mask]).mean() * 100.0)


def all_metrics(pred, target, mask=None) -> dict[str, float]:
    return {
        "mae": masked_mae(pred, target, mask),
        "rmse": masked_rmse(pred, target, mask),
        "mape": masked_mape(pred, target, mask),
    }


def masked_mae_loss(pred: Tensor, target, mask) -> Tensor:
    """Differentiable masked MAE over observed cells (0 when nothing is observed)."""
    m = np.asarray(mask, dtype=pred.dtype)
    count = float(m.sum())
    diff = tabs(pred - Tensor(np.asarray(target, dtype=pred.dtype)))
    return tsum(diff * Tensor(m)) * (1.0 / max(count, 1.0))


def format_table(table: dict, title: str | None = None) -> str:
    """Aligned text table: one row per horizon with MAE, RMSE and MAPE columns."""
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'horizon':>8} {'MAE':>12} {'RMSE':>12} {'MAPE(%)':>10}")
    for h, row in table.items():
        lines.append(f"{h:>8} {row['mae']:>12.4f} {row['rmse']:>12.4f} {row['mape']:>10.2f}")
    return "\n".join(lines)
