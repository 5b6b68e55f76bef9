"""Trained-parameter files: a versioned binary that carries its own config.

Layout (little-endian)::

    b"FCSTGP"  uint16 version
    uint32 len + UTF-8 config text   (the same text format config files use)
    uint32 len + UTF-8 JSON header   (N, L, max_rul, tensor names and shapes)
    float64 payload                  (tensors in header order, C order)

The bytes depend only on the model, so identical runs give identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig, TrainConfig, dump_config, parse_config
from .errors import ConfigError, DataError
from .model import FCSTGNN

MAGIC = b"FCSTGP"
VERSION = 1


def _blob(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def params_bytes(model: FCSTGNN, train_cfg: TrainConfig | None = None) -> bytes:
    named = model.named_tensors()
    header = {"N": model.n_sensors, "L": model.length, "max_rul": model.max_rul,
              "tensors": [[n, list(t.shape)] for n, t in named]}
    parts = [MAGIC, struct.pack("<H", VERSION),
             _blob(dump_config(model.config, train_cfg)),
             _blob(json.dumps(header, sort_keys=True))]
    parts += [np.ascontiguousarray(t.data, dtype="<f8").tobytes() for _, t in named]
    return b"".join(parts)


def save_params(path, model: FCSTGNN, train_cfg: TrainConfig | None = None) -> None:
    Path(path).write_bytes(params_bytes(model, train_cfg))


def _read_blob(raw: bytes, off: int, where: str) -> tuple[str, int]:
    if off + 4 > len(raw):
        raise DataError(f"{where}: truncated params file")
    (n,) = struct.unpack_from("<I", raw, off)
    if off + 4 + n > len(raw):
        raise DataError(f"{where}: truncated params file")
    return raw[off + 4: off + 4 + n].decode("utf-8"), off + 4 + n


def load_params(path) -> tuple[FCSTGNN, TrainConfig, str]:
    """Rebuild the model stored at ``path``.  Returns ``(model, train_cfg, config_text)``."""
    where = str(path)
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read params file {path}: {exc}") from None
    if raw[:6] != MAGIC:
        raise DataError(f"{where}: not a params file (bad magic)")
    (version,) = struct.unpack_from("<H", raw, 6)
    if version != VERSION:
        raise DataError(f"{where}: unsupported params version {version}")
    cfg_text, off = _read_blob(raw, 8, where)
    head_text, off = _read_blob(raw, off, where)
    model_cfg, train_cfg, _ = parse_config(cfg_text)
    head = json.loads(head_text)
    model = FCSTGNN(model_cfg, head["N"], head["L"], 0, max_rul=head["max_rul"])
    arrays = []
    for (name, shape), (mine, t) in zip(head["tensors"], model.named_tensors(), strict=True):
        if name != mine or tuple(shape) != t.shape:
            raise ConfigError(f"{where}: tensor {name} {tuple(shape)} does not match "
                              f"the config's {mine} {t.shape}")
        n = int(np.prod(shape))
        if off + 8 * n > len(raw):
            raise DataError(f"{where}: truncated tensor {name}")
        arrays.append(np.frombuffer(raw, "<f8", n, off).reshape(shape).copy())
        off += 8 * n
    if off != len(raw):
        raise DataError(f"{where}: {len(raw) - off} trailing bytes")
    model.set_arrays(arrays)
    return model, train_cfg, cfg_text


def echo_config(path) -> tuple[ModelConfig, TrainConfig]:
    _, train_cfg, text = load_params(path)
    model_cfg, train_cfg, _ = parse_config(text)
    return model_cfg, train_cfg
