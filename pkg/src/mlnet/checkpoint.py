"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MLNETCKPT"          magic
    u32                   format version (1)
    i64                   RNG seed
    u32 + bytes           model config as ``key = value`` text (UTF-8)
    u32                   number of tensors, then per tensor:
        u16 + bytes       name (UTF-8); the prior mask is "prior.U"
        u8 + u32 * ndim   shape
        f64 * size        values, row-major
    u8                    1 if optimizer state follows, else 0
        f64 * 4           learning rate, momentum, weight decay, max grad norm (NaN = off)
        u64               step counter
        u32 + tensors     velocities, same encoding as above
"""
from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from . import config as config_mod
from .network import Model, conv_plan
from .tensor import Tensor
from .training import OptimizerState

MAGIC = b"MLNETCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode()
    out = [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim)]
    out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def encode(model: Model, optimizer: OptimizerState | None = None) -> bytes:
    cfg_text = config_mod.model_config_text(model.config).encode()
    params = model.named_parameters()
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<q", model.config.seed),
             struct.pack("<I", len(cfg_text)), cfg_text, struct.pack("<I", len(params))]
    parts += [_pack_tensor(name, t.data) for name, t in params.items()]
    if optimizer is None:
        parts.append(struct.pack("<B", 0))
    else:
        clip = math.nan if optimizer.max_grad_norm is None else optimizer.max_grad_norm
        parts.append(struct.pack("<B4dQ", 1, optimizer.learning_rate, optimizer.momentum,
                                 optimizer.weight_decay, clip, optimizer.step))
        parts.append(struct.pack("<I", len(optimizer.velocity)))
        parts += [_pack_tensor(name, v) for name, v in sorted(optimizer.velocity.items())]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated: expected at least {self.pos + n} bytes, "
                                  f"file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self) -> tuple[str, np.ndarray]:
        (n,) = self.unpack("<H")
        name = self.take(n).decode()
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(self.take(8 * size), dtype="<f8").astype(np.float64)
        return name, arr.reshape(shape)


def decode(buf: bytes) -> tuple[Model, OptimizerState | None]:
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"not a checkpoint: bad magic {buf[:len(MAGIC)]!r}")
    r = _Reader(buf)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (seed,) = r.unpack("<q")
    (n,) = r.unpack("<I")
    cfg = config_mod.build(config_mod.parse_text(r.take(n).decode()), seed=seed).model
    (count,) = r.unpack("<I")
    tensors = dict(r.tensor() for _ in range(count))
    model = Model(cfg)
    for name, arr in tensors.items():
        t = Tensor(arr, requires_grad=True, name=name)
        if name == "prior.U":
            model.prior = t
        else:
            model.params[name] = t
    _check_layout(model)
    (has_opt,) = r.unpack("<B")
    opt = None
    if has_opt:
        lr, mu, wd, clip, step = r.unpack("<4dQ")
        (nv,) = r.unpack("<I")
        velocity = dict(r.tensor() for _ in range(nv))
        opt = OptimizerState(lr, mu, wd, velocity, step,
                             max_grad_norm=None if math.isnan(clip) else clip)
    if r.pos != len(buf):
        raise CheckpointError(f"checkpoint has {len(buf) - r.pos} trailing bytes "
                              f"(expected length {r.pos}, file has {len(buf)})")
    return model, opt


def _check_layout(model: Model):
    expected = {}
    for name, cin, cout, k in conv_plan(model.config):
        expected[f"{name}.weight"] = (cout, cin, k, k)
        expected[f"{name}.bias"] = (cout,)
    wc, hc = model.config.mask_size
    expected["prior.U"] = (1, 1, hc, wc)
    got = {k: v.shape for k, v in model.named_parameters().items() if v is not None}
    if expected != got:
        missing = sorted(set(expected) - set(got))
        raise CheckpointError(f"checkpoint tensors do not match its config (missing {missing[:3]}, "
                              f"or shape differences)")


def save_checkpoint(model: Model, path: str | Path, optimizer: OptimizerState | None = None) -> None:
    Path(path).write_bytes(encode(model, optimizer))


def load_checkpoint(path: str | Path) -> tuple[Model, OptimizerState | None]:
    return decode(Path(path).read_bytes())
