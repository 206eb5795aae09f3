"""
Binary checkpoints with a canonical, byte-reproducible layout.

    magic      8 bytes  b"ADANCKPT"
    version    u8
    config     u32 length + UTF-8 text, sorted "key=value" lines
    count      u32 number of tensor records
    record     u32 name length + UTF-8 name, u8 rank, rank x u64 dims,
               row-major float64 values

All integers are little-endian. Records are sorted by name. Floats in the
config block use ``repr`` so they parse back to the identical value.
"""

import dataclasses
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, build_model
from .optim import AdamState
from .trainer import TrainConfig

MAGIC = b"ADANCKPT"
VERSION = 1

_ADAM_PREFIX = "adam."


def _encode_value(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _decode_value(kind, text):
    if kind is bool:
        return text == "1"
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def _config_fields(cls):
    return [f for f in dataclasses.fields(cls) if f.type in (int, float, str, bool)]


@dataclass
class Checkpoint:
    model_config: ModelConfig
    state: dict
    train_config: Optional[TrainConfig] = None
    best_epoch: int = -1
    dev_accuracy: float = float("nan")
    optimizers: dict = field(default_factory=dict)

    # construction -----------------------------------------------------------

    @classmethod
    def from_model(cls, model, train_config=None, history=None, optimizers=None):
        ckpt = cls(model.config, model.copy_state(), train_config)
        if history is not None:
            ckpt.best_epoch = history.best_epoch
            ckpt.dev_accuracy = history.best_accuracy
        if optimizers:
            ckpt.optimizers = dict(optimizers)
        return ckpt

    def to_model(self):
        model = build_model(self.model_config, seed=0)
        model.load_state(self.state)
        return model

    # serialization ----------------------------------------------------------

    def _config_lines(self):
        items = {}
        for f in _config_fields(ModelConfig):
            items[f"model.{f.name}"] = getattr(self.model_config, f.name)
        if self.train_config is not None:
            for f in _config_fields(TrainConfig):
                items[f"train.{f.name}"] = getattr(self.train_config, f.name)
        items["meta.best_epoch"] = self.best_epoch
        items["meta.dev_accuracy"] = float(self.dev_accuracy)
        for group, opt in sorted(self.optimizers.items()):
            for attr in ("learning_rate", "beta1", "beta2", "epsilon", "t"):
                items[f"{_ADAM_PREFIX}{group}.{attr}"] = getattr(opt, attr)
        return [f"{k}={_encode_value(v)}" for k, v in sorted(items.items())]

    def _records(self):
        records = {name: arr for name, arr in self.state.items()}
        for group, opt in self.optimizers.items():
            for name in opt.m:
                records[f"{_ADAM_PREFIX}{group}.m/{name}"] = opt.m[name]
                records[f"{_ADAM_PREFIX}{group}.v/{name}"] = opt.v[name]
        return sorted(records.items())

    def to_bytes(self):
        out = [MAGIC, struct.pack("<B", VERSION)]
        config = ("\n".join(self._config_lines()) + "\n").encode("utf-8")
        out.append(struct.pack("<I", len(config)))
        out.append(config)
        records = self._records()
        out.append(struct.pack("<I", len(records)))
        for name, arr in records:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            out.append(struct.pack("<I", len(encoded)))
            out.append(encoded)
            out.append(struct.pack("<B", arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.append(arr.tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data):
        reader = _Reader(data)
        if reader.take(len(MAGIC)) != MAGIC:
            raise CheckpointError("bad checkpoint magic")
        (version,) = reader.unpack("<B")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (length,) = reader.unpack("<I")
        try:
            text = reader.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"config block is not UTF-8: {exc}") from None
        items = {}
        for line in text.splitlines():
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointError(f"malformed config line {line!r}")
            items[key] = value

        (count,) = reader.unpack("<I")
        records = {}
        for _ in range(count):
            (n,) = reader.unpack("<I")
            name = reader.take(n).decode("utf-8")
            (rank,) = reader.unpack("<B")
            dims = reader.unpack(f"<{rank}Q") if rank else ()
            size = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64)
            records[name] = values.reshape(dims)
        if not reader.done():
            raise CheckpointError("trailing bytes after checkpoint records")

        try:
            model_config = ModelConfig(**_section(items, "model.", ModelConfig))
            train_config = None
            if any(k.startswith("train.") for k in items):
                train_config = TrainConfig(**_section(items, "train.", TrainConfig))
            best_epoch = int(items["meta.best_epoch"])
            dev_accuracy = float(items["meta.dev_accuracy"])
        except (KeyError, ValueError, TypeError) as exc:
            raise CheckpointError(f"bad checkpoint config: {exc}") from None

        optimizers = {}
        for key in items:
            if key.startswith(_ADAM_PREFIX) and key.endswith(".t"):
                group = key[len(_ADAM_PREFIX) : -2]
                p = f"{_ADAM_PREFIX}{group}."
                opt = AdamState(
                    learning_rate=float(items[p + "learning_rate"]),
                    beta1=float(items[p + "beta1"]),
                    beta2=float(items[p + "beta2"]),
                    epsilon=float(items[p + "epsilon"]),
                    t=int(items[p + "t"]),
                )
                optimizers[group] = opt
        state = {}
        for name, arr in records.items():
            if name.startswith(_ADAM_PREFIX):
                head, _, param = name.partition("/")
                group, moment = head[len(_ADAM_PREFIX) :].rsplit(".", 1)
                if group not in optimizers:
                    raise CheckpointError(f"moment record {name!r} without optimizer settings")
                getattr(optimizers[group], moment)[param] = arr
            else:
                state[name] = arr
        return cls(model_config, state, train_config, best_epoch, dev_accuracy, optimizers)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _section(items, prefix, cls):
    kinds = {f.name: f.type for f in _config_fields(cls)}
    out = {}
    for key, value in items.items():
        if key.startswith(prefix):
            name = key[len(prefix) :]
            if name not in kinds:
                raise CheckpointError(f"unknown config key {key!r}")
            out[name] = _decode_value(kinds[name], value)
    return out


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self):
        return self.pos == len(self.data)


def save_checkpoint(path, model, train_config=None, history=None, optimizers=None):
    ckpt = Checkpoint.from_model(model, train_config, history, optimizers)
    ckpt.save(path)
    return ckpt


def load_checkpoint(path):
    return Checkpoint.load(path)
