"""Joint training of graph learner and forecaster, evaluation and the HA baseline."""

from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import data as dp
from .checkpoint import Checkpoint
from .config import TrainConfig
from .metrics import all_metrics, masked_mae, masked_mae_loss
from .model import BGSLF
from .optim import Adam, NumericError, clip_grad_norm, lr_at
from .tensor import backward, zero_grad

logger = logging.getLogger(__name__)

DEFAULT_HORIZONS = (3, 6, 12)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_mae: float   # mean batch loss, normalized units
    valid_mae: float   # physical units


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: BGSLF
    history: list[EpochLog] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def _single_thread(enabled: bool):
    if not enabled:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


def prepare(ds: dp.MtsDataset) -> dp.MtsDataset:
    return ds if ds.normalized is not None else dp.zscore_fit_apply(ds)


def _teacher_ratio(cfg: TrainConfig, step: int) -> float:
    if cfg.teacher_forcing_ratio <= 0:
        return 0.0
    k = cfg.teacher_forcing_decay_steps
    return cfg.teacher_forcing_ratio * k / (k + math.exp(min(step / k, 700.0)))


def predict(model: BGSLF, ds: dp.MtsDataset, split: str, batch_size: int = 64):
    """Normalized predictions for every window of ``split``.

    Returns (pred, starts, selections) with pred shaped (W, T_out, N, D).
    """
    cfg = model.cfg
    graphs = model.graph_set().detach()
    preds, starts, picks = [], [], []
    for batch in dp.window(ds, cfg.input_len, cfg.output_len, split, batch_size):
        pred, sel = model.forward(batch.inputs, graphs=graphs)
        preds.append(pred.data.astype(np.float64))
        starts.append(batch.starts)
        picks.append(sel.index)
    if not preds:
        shape = (0, cfg.output_len, ds.num_nodes, ds.num_features)
        return np.empty(shape), np.empty(0, dtype=np.int64), []
    return np.concatenate(preds), np.concatenate(starts), picks


def _targets(ds: dp.MtsDataset, starts: np.ndarray, input_len: int, output_len: int):
    idx = starts[:, None] + input_len + np.arange(output_len)
    return ds.values[idx], ds.mask[idx]


def evaluate_model(model: BGSLF, ds: dp.MtsDataset, horizons=DEFAULT_HORIZONS, split: str = "test",
                   batch_size: int = 64) -> tuple[dict, list[int]]:
    """Per-horizon MAE/RMSE/MAPE in physical units, plus the per-batch graph choices."""
    cfg = model.cfg
    if ds.num_nodes != model.num_nodes or ds.num_features != model.num_features:
        raise dp.DataError(
            f"dataset has N={ds.num_nodes}, D={ds.num_features}; model expects "
            f"N={model.num_nodes}, D={model.num_features}"
        )
    for h in horizons:
        if not 1 <= h <= cfg.output_len:
            raise ValueError(f"horizon {h} outside 1..{cfg.output_len}")
    pred, starts, picks = predict(model, ds, split, batch_size)
    pred = ds.inverse_transform(pred)
    truth, mask = _targets(ds, starts, cfg.input_len, cfg.output_len)
    table = {h: all_metrics(pred[:, h - 1], truth[:, h - 1], mask[:, h - 1]) for h in horizons}
    return table, picks


def _valid_mae(model: BGSLF, ds: dp.MtsDataset, split: str = "valid") -> float:
    cfg = model.cfg
    pred, starts, _ = predict(model, ds, split, cfg.batch_size)
    if len(starts) == 0:
        return float("nan")
    truth, mask = _targets(ds, starts, cfg.input_len, cfg.output_len)
    return masked_mae(ds.inverse_transform(pred), truth, mask)


def to_checkpoint(model: BGSLF, ds: dp.MtsDataset, state=None, best_valid=None, epoch: int = 0) -> Checkpoint:
    return Checkpoint(
        config=model.cfg.to_dict(),
        params=state if state is not None else model.state(),
        buffers={"segments": model.segments},
        mean=list(np.atleast_1d(ds.mean)),
        std=list(np.atleast_1d(ds.std)),
        best_valid=best_valid,
        epoch=epoch,
        meta={"num_nodes": model.num_nodes, "num_features": model.num_features},
    )


def model_from_checkpoint(ckpt: Checkpoint) -> BGSLF:
    cfg = TrainConfig.from_dict(ckpt.config)
    model = BGSLF(cfg, ckpt.buffers["segments"], ckpt.meta.get("num_features"))
    model.load_state(ckpt.params)
    return model


def train(cfg: TrainConfig, ds: dp.MtsDataset, on_epoch: Callable[[EpochLog], None] | None = None,
          max_steps: int | None = None) -> TrainResult:
    """Minimize masked MAE on the training split over all parameters jointly.

    The graph set is regenerated from the current MGN weights for every batch;
    the checkpoint keeps the parameters with the best validation MAE.
    """
    ds = prepare(ds)
    segments = dp.graph_segments(ds, cfg.period)
    model = BGSLF(cfg, segments.values, ds.num_features)
    opt = Adam(model.params)
    rng = np.random.default_rng(cfg.seed + 1)
    starts = dp.window_starts(ds, "train", cfg.input_len, cfg.output_len)
    if cfg.train_windows is not None:
        starts = starts[: cfg.train_windows]
    if len(starts) == 0:
        raise dp.DataError("training split is shorter than one window")
    result = TrainResult(checkpoint=None, model=model)
    best_valid, best_state, best_epoch = math.inf, model.state(), 0
    step = 0
    with _single_thread(cfg.deterministic):
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg.lr, cfg.lr_decay, cfg.decay_every, cfg.lr_floor)
            order = rng.permutation(len(starts)) if cfg.shuffle else np.arange(len(starts))
            losses = []
            for b, i in enumerate(range(0, len(starts), cfg.batch_size)):
                batch = dp.gather(ds, starts[order[i:i + cfg.batch_size]], cfg.input_len, cfg.output_len)
                tf = _teacher_ratio(cfg, step)
                pred, _ = model.forward(batch.inputs, batch.targets, tf, rng)
                loss = masked_mae_loss(pred, batch.targets, batch.mask)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
                zero_grad(model.params.values())
                backward(loss)
                grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
                clip_grad_norm(grads, cfg.clip_norm)
                try:
                    opt.step(grads, lr)
                except NumericError as exc:
                    raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from None
                losses.append(value)
                result.step_losses.append(value)
                step += 1
                if max_steps is not None and step >= max_steps:
                    break
            valid = _valid_mae(model, ds)
            entry = EpochLog(epoch, lr, float(np.mean(losses)), valid)
            result.history.append(entry)
            logger.info("epoch %d lr %.3g train %.5f valid %.5f", epoch, lr, entry.train_mae, valid)
            if on_epoch is not None:
                on_epoch(entry)
            if math.isfinite(valid) and valid < best_valid:
                best_valid, best_state, best_epoch = valid, model.state(), epoch
            if max_steps is not None and step >= max_steps:
                break
    if not result.history:
        best_valid = _valid_mae(model, ds)
    model.load_state(best_state)
    result.checkpoint = to_checkpoint(model, ds, best_state,
                                      best_valid if math.isfinite(best_valid) else None, best_epoch)
    return result


def evaluate(ckpt: Checkpoint, ds: dp.MtsDataset, horizons=DEFAULT_HORIZONS, split: str = "test"):
    """Rebuild the model from a checkpoint and score ``split`` with the stored normalization."""
    model = model_from_checkpoint(ckpt)
    ds = ds.with_stats(ckpt.mean, ckpt.std)
    return evaluate_model(model, ds, horizons, split)


def historical_average(ds: dp.MtsDataset, period: int, horizons=DEFAULT_HORIZONS, split: str = "test") -> dict:
    """Predict each step by the training mean at the same phase (t mod period).

    The prediction does not depend on lead time, so one score over every step of
    ``split`` is reported for all horizons.
    """
    tr_start, tr_stop = ds.splits["train"]
    if tr_stop - tr_start < period:
        raise dp.DataError(f"training split ({tr_stop - tr_start} steps) is shorter than period {period}")
    vals, mask = ds.values[tr_start:tr_stop], ds.mask[tr_start:tr_stop]
    phase = np.arange(tr_start, tr_stop) % period
    overall = np.where(mask.any(axis=0), (vals * mask).sum(axis=0) / np.maximum(mask.sum(axis=0), 1), 0.0)
    means = np.empty((period,) + vals.shape[1:])
    for k in range(period):
        sel = phase == k
        cnt = mask[sel].sum(axis=0)
        tot = (vals[sel] * mask[sel]).sum(axis=0)
        means[k] = np.where(cnt > 0, tot / np.maximum(cnt, 1), overall)
    start, stop = ds.splits[split]
    pred = means[np.arange(start, stop) % period]
    row = all_metrics(pred, ds.values[start:stop], ds.mask[start:stop])
    return {h: dict(row) for h in horizons}
