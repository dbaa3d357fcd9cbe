"""Binary checkpoint format.

Layout (little endian)::

    b"BGCK1" | u8 version | u32 len | JSON header (UTF-8)
    repeated: u32 len | name (UTF-8) | u32 rank | rank * u32 extents | float32 values

The header echoes the run config and holds normalization statistics, the best
validation MAE and its epoch.  Records whose name starts with ``buffer.`` are
non-trainable state (the cached segment tensor).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"BGCK1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    mean: list[float] = field(default_factory=list)
    std: list[float] = field(default_factory=list)
    best_valid: float | None = None
    epoch: int = 0
    meta: dict = field(default_factory=dict)


def _pack_record(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def dumps(ckpt: Checkpoint) -> bytes:
    header = {
        "config": ckpt.config,
        "mean": [float(x) for x in ckpt.mean],
        "std": [float(x) for x in ckpt.std],
        "best_valid": ckpt.best_valid,
        "epoch": ckpt.epoch,
        "meta": ckpt.meta,
    }
    js = json.dumps(header, sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(js)), js]
    for name, arr in ckpt.params.items():
        out.append(_pack_record(name, arr))
    for name, arr in ckpt.buffers.items():
        out.append(_pack_record("buffer." + name, arr))
    return b"".join(out)


def loads(raw: bytes) -> Checkpoint:
    if raw[:5] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    try:
        (version,) = struct.unpack_from("<B", raw, 5)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (n,) = struct.unpack_from("<I", raw, 6)
        pos = 10
        header = json.loads(raw[pos:pos + n].decode("utf-8"))
        pos += n
        params, buffers = {}, {}
        while pos < len(raw):
            (ln,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + ln].decode("utf-8")
            pos += ln
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 4 * count > len(raw):
                raise CheckpointError(f"truncated record {name!r}")
            arr = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
            pos += 4 * count
            if name.startswith("buffer."):
                buffers[name[len("buffer."):]] = arr
            else:
                params[name] = arr
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    return Checkpoint(
        config=header["config"], params=params, buffers=buffers,
        mean=header["mean"], std=header["std"], best_valid=header["best_valid"],
        epoch=header["epoch"], meta=header.get("meta", {}),
    )


def save(path, ckpt: Checkpoint) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(dumps(ckpt))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from None
    return loads(raw)
