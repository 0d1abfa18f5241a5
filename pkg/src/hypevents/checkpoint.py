"""Binary model checkpoints with bit-exact round trips.

Layout, all integers little-endian uint32 unless noted:

    magic   b"HYPEVCKPT"
    version uint32 (currently 1)
    kind    length-prefixed utf-8 ("lm" or "mtl")
    config  length-prefixed utf-8 (flat key = value lines)
    vocab   length-prefixed utf-8 (the vocabulary file format)
    count   uint32 number of parameters
    then per parameter, sorted by name:
      name  length-prefixed utf-8
      ndim  uint32, then ndim uint32 dims
      data  raw float64 little-endian values

Parameters are written sorted and floats raw, so save -> load -> save
reproduces the file byte for byte.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Vocab
from .infill import LmConfig, LmModel
from .mtl import MtlConfig, MtlModel
from .tensor import Tensor

MAGIC = b"HYPEVCKPT"
VERSION = 1
KINDS = ("lm", "mtl")


class CheckpointError(Exception):
    """Base class for unreadable or mismatched checkpoint files."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class KindMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config_text: str
    vocab: Vocab
    params: dict[str, np.ndarray]


def _config_text(config) -> str:
    pairs = sorted(vars(config).items()) if not hasattr(config, "__dataclass_fields__") \
        else sorted((f, getattr(config, f)) for f in config.__dataclass_fields__)
    return "\n".join(f"{k} = {v}" for k, v in pairs) + "\n"


def _parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _write_str(out, text: str) -> None:
    data = text.encode("utf-8")
    out.write(struct.pack("<I", len(data)))
    out.write(data)


def save_checkpoint(model, path) -> None:
    """Serialize an LM or MTL model (config, vocab, parameters)."""
    if isinstance(model, LmModel):
        kind = "lm"
    elif isinstance(model, MtlModel):
        kind = "mtl"
    else:
        raise CheckpointError(f"cannot checkpoint a {type(model).__name__}")
    buffer = io.BytesIO()
    buffer.write(MAGIC)
    buffer.write(struct.pack("<I", VERSION))
    _write_str(buffer, kind)
    _write_str(buffer, _config_text(model.config))
    _write_str(buffer, model.vocab.to_text())
    names = sorted(model.params)
    buffer.write(struct.pack("<I", len(names)))
    for name in names:
        data = model.params[name].data
        _write_str(buffer, name)
        buffer.write(struct.pack("<I", data.ndim))
        for dim in data.shape:
            buffer.write(struct.pack("<I", dim))
        buffer.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
    Path(path).write_bytes(buffer.getvalue())


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"{self.path}: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}")
    r = _Reader(raw, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise BadMagicError(f"{path}: not a model checkpoint")
    version = r.u32()
    if version != VERSION:
        raise VersionMismatchError(
            f"{path}: format version {version}, expected {VERSION}")
    kind = r.text()
    if kind not in KINDS:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    config_text = r.text()
    vocab = Vocab.from_text(r.text(), path=path)
    params: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.text()
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        count = 1
        for dim in shape:
            count *= dim
        data = np.frombuffer(r.take(count * 8), dtype="<f8").reshape(shape)
        params[name] = data.astype(np.float64)
    if r.pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - r.pos} trailing bytes")
    return Checkpoint(kind=kind, config_text=config_text, vocab=vocab,
                      params=params)


def _coerce(value: str, annotation: str):
    if annotation == "int":
        return int(value)
    if annotation == "float":
        return float(value)
    return value


def _config_from_text(cls, text: str):
    known = cls.__dataclass_fields__
    kwargs = {}
    for key, value in _parse_config_text(text).items():
        if key not in known:
            raise CheckpointError(f"unknown config key {key!r} for "
                                  f"{cls.__name__}")
        kwargs[key] = _coerce(value, known[key].type)
    return cls(**kwargs)


def _install_params(model, params: dict[str, np.ndarray], path) -> None:
    if sorted(model.params) != sorted(params):
        missing = sorted(set(model.params) - set(params))
        extra = sorted(set(params) - set(model.params))
        raise CheckpointError(f"{path}: parameter names do not match "
                              f"(missing {missing}, unexpected {extra})")
    for name, data in params.items():
        if model.params[name].shape != data.shape:
            raise CheckpointError(
                f"{path}: {name} has shape {data.shape}, model expects "
                f"{model.params[name].shape}")
        model.params[name] = Tensor(data.copy(), requires_grad=True)


def load_lm(path) -> LmModel:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "lm":
        raise KindMismatchError(f"{path}: holds a {ckpt.kind!r} model, "
                                "expected lm")
    config = _config_from_text(LmConfig, ckpt.config_text)
    model = LmModel(config, ckpt.vocab)
    _install_params(model, ckpt.params, path)
    return model


def load_mtl(path) -> MtlModel:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "mtl":
        raise KindMismatchError(f"{path}: holds a {ckpt.kind!r} model, "
                                "expected mtl")
    config = _config_from_text(MtlConfig, ckpt.config_text)
    model = MtlModel(config, ckpt.vocab)
    _install_params(model, ckpt.params, path)
    return model
