from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields

from .graph import ACTIVATIONS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    period: int = 288
    num_graphs: int = 2
    alpha: float = 1.0
    eps: float = 0.05
    hidden: int = 64
    mgn_hidden: int = 16
    kernel_width: int = 3
    batch_size: int = 64
    epochs: int = 200
    lr: float = 3e-3
    lr_decay: float = 0.1
    decay_every: int = 6
    lr_floor: float = 3e-5
    clip_norm: float = 5.0
    seed: int = 0
    deterministic: bool = True
    activation: str = "ssu"
    teacher_forcing_ratio: float = 0.0
    teacher_forcing_decay_steps: int = 2000
    zero_is_missing: bool = False
    input_len: int = 12
    output_len: int = 12
    redefine_grad: bool = True
    ssu_leak: float = 0.0
    dtype: str = "float32"
    shuffle: bool = True
    train_windows: int | None = None   # keep only the first k training windows (overfit harness)

    def __post_init__(self):
        checks = [
            (self.period >= 1, "period must be >= 1"),
            (self.num_graphs >= 1, "num_graphs must be >= 1"),
            (self.alpha > 0, "alpha must be positive"),
            (0 < self.eps <= 0.5, "eps must lie in (0, 0.5]"),
            (self.hidden >= 1 and self.mgn_hidden >= 1, "hidden widths must be positive"),
            (self.kernel_width >= 1 and self.kernel_width % 2 == 1, "kernel_width must be odd"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.lr > 0 and self.lr_floor > 0, "learning rates must be positive"),
            (0 < self.lr_decay < 1, "lr_decay must lie in (0, 1)"),
            (self.decay_every >= 1, "decay_every must be >= 1"),
            (self.clip_norm > 0, "clip_norm must be positive"),
            (self.activation in ACTIVATIONS, f"activation must be one of {ACTIVATIONS}"),
            (0 <= self.teacher_forcing_ratio <= 1, "teacher_forcing_ratio must lie in [0, 1]"),
            (self.input_len >= 1 and self.output_len >= 1, "window lengths must be positive"),
            (self.dtype in ("float32", "float64"), "dtype must be float32 or float64"),
            (self.train_windows is None or self.train_windows >= 1, "train_windows must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


# keys accepted in a CLI config file on top of TrainConfig
RUN_KEYS = {"data": None, "format": None, "out_dir": "run"}


def load_run_config(path) -> tuple[TrainConfig, dict]:
    """Parse a JSON run file into (TrainConfig, run options)."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    run = {k: raw.pop(k, default) for k, default in RUN_KEYS.items()}
    cfg = TrainConfig.from_dict(raw)
    if not run["data"]:
        raise ConfigError(f"{path}: missing required key 'data'")
    return cfg, run
