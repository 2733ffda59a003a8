"""Versioned binary checkpoints for recognizer and refiner models.

Layout: magic "LFCK", version u32 LE, kind (u16 length + UTF-8, "asr" or
"refiner"), config echo (u32 length + UTF-8 text), metadata (epoch u32,
dev metric f64, seed u64), tensor count u32, then per tensor: name (u16
length + UTF-8), rank u8, dims u32 each, little-endian float32 data.
Parameters round-trip bit-exactly.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .asr import CtcAsrModel, EncoderConfig
from .unet import RefinerConfig, VectorFieldModel

__all__ = ["CheckpointError", "CheckpointMeta", "save_checkpoint", "load_checkpoint"]

MAGIC = b"LFCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class CheckpointMeta:
    kind: str
    epoch: int
    dev_metric: float
    seed: int


def _encoder_config_text(cfg: EncoderConfig) -> str:
    fields = ("layers", "heads", "hidden_dim", "ffn_dim", "vocab_size", "feature_dim")
    return "".join(f"{f}={getattr(cfg, f)}\n" for f in fields)


def _encoder_config_parse(text: str) -> EncoderConfig:
    vals = dict(line.split("=", 1) for line in text.splitlines() if line)
    return EncoderConfig(
        layers=int(vals["layers"]),
        heads=int(vals["heads"]),
        hidden_dim=int(vals["hidden_dim"]),
        ffn_dim=int(vals["ffn_dim"]),
        vocab_size=int(vals["vocab_size"]),
        feature_dim=int(vals["feature_dim"]),
    )


def _refiner_config_text(cfg: RefinerConfig) -> str:
    mults = ",".join(str(m) for m in cfg.channel_mults)
    return (
        f"depth={cfg.depth}\nbase_channels={cfg.base_channels}\n"
        f"channel_mults={mults}\ntime_dim={cfg.time_dim}\nlatent_dim={cfg.latent_dim}\n"
    )


def _refiner_config_parse(text: str) -> RefinerConfig:
    vals = dict(line.split("=", 1) for line in text.splitlines() if line)
    return RefinerConfig(
        depth=int(vals["depth"]),
        base_channels=int(vals["base_channels"]),
        channel_mults=tuple(int(v) for v in vals["channel_mults"].split(",")),
        time_dim=int(vals["time_dim"]),
        latent_dim=int(vals["latent_dim"]),
    )


def _kind_of(model) -> str:
    if isinstance(model, CtcAsrModel):
        return "asr"
    if isinstance(model, VectorFieldModel):
        return "refiner"
    raise CheckpointError(f"cannot checkpoint a {type(model).__name__}")


def save_checkpoint(model, path, epoch: int = 0, dev_metric: float = 0.0, seed: int = 0):
    kind = _kind_of(model)
    echo = (
        _encoder_config_text(model.config)
        if kind == "asr"
        else _refiner_config_text(model.config)
    ).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    kb = kind.encode()
    buf.write(struct.pack("<H", len(kb)))
    buf.write(kb)
    buf.write(struct.pack("<I", len(echo)))
    buf.write(echo)
    buf.write(struct.pack("<IdQ", epoch, dev_metric, seed))
    buf.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, expect_kind: str | None = None):
    """Rebuild the model from a checkpoint; returns (model, meta).

    `expect_kind` guards against loading e.g. a recognizer checkpoint where
    a refiner is required.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        if raw[:4] != MAGIC:
            raise CheckpointError(
                f"bad checkpoint magic {raw[:4]!r} (expected {MAGIC!r})"
            )
        (version,) = struct.unpack_from("<I", raw, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 8
        (kind_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        kind = raw[off : off + kind_len].decode()
        off += kind_len
        if kind not in ("asr", "refiner"):
            raise CheckpointError(f"unknown model kind {kind!r}")
        if expect_kind is not None and kind != expect_kind:
            raise CheckpointError(f"expected a {expect_kind!r} checkpoint, found {kind!r}")
        (echo_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        echo = raw[off : off + echo_len].decode()
        off += echo_len
        epoch, dev_metric, seed = struct.unpack_from("<IdQ", raw, off)
        off += struct.calcsize("<IdQ")
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off : off + name_len].decode()
            off += name_len
            (rank,) = struct.unpack_from("<B", raw, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
            tensors[name] = data.copy()
        if off != len(raw):
            raise CheckpointError(f"{len(raw) - off} trailing bytes in checkpoint")
    except struct.error as err:
        raise CheckpointError(f"truncated checkpoint: {err}") from err

    if kind == "asr":
        model = CtcAsrModel(_encoder_config_parse(echo), seed=0)
    else:
        model = VectorFieldModel(_refiner_config_parse(echo), seed=0)
    if set(tensors) != set(model.params):
        missing = sorted(set(model.params) - set(tensors))
        extra = sorted(set(tensors) - set(model.params))
        raise CheckpointError(f"parameter name mismatch: missing={missing} extra={extra}")
    for name, arr in tensors.items():
        p = model.params[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"{name}: stored shape {arr.shape} != {p.data.shape}")
        p.data = arr.astype(p.data.dtype)
    return model, CheckpointMeta(kind=kind, epoch=epoch, dev_metric=dev_metric, seed=seed)
