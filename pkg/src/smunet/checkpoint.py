"""Versioned binary checkpoints with CRC integrity.

Layout (all integers little-endian):

    magic   4 bytes  b"SMUN"
    version u32      currently 1
    config  u32 length + UTF-8 config text
    params  u32 count, then per parameter:
              u32 name length + UTF-8 name
              u32 ndim + u32 per extent
              raw float64 values (row-major)
    adam    u64 step count, 5 x f64 (lr, beta1, beta2, eps, grad_clip),
            then m and v arrays (float64, parameter order)
    rng     u64 shuffle-stream state
    epoch   u32
    crc     u32 CRC32 of every preceding byte

A CRC mismatch or unknown version is a hard error: a corrupted checkpoint
is never silently reinterpreted. Loading restores parameters, optimizer
moments and RNG state bitwise.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .optim import Adam

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"SMUN"
VERSION = 1


class CheckpointError(Exception):
    pass


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def save_checkpoint(path, model, optimizer: Adam, config_text: str,
                    rng_state: int, epoch: int) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(config_text)]
    params = model.param_dict()
    parts.append(struct.pack("<I", len(params)))
    for name, p in params.items():
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", p.ndim))
        parts.append(struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p.data).astype("<f8").tobytes())
    parts.append(struct.pack("<Q", optimizer.t))
    parts.append(struct.pack("<5d", optimizer.lr, optimizer.beta1, optimizer.beta2,
                             optimizer.eps, optimizer.grad_clip))
    for name in params:
        parts.append(optimizer.m[name].astype("<f8").tobytes())
    for name in params:
        parts.append(optimizer.v[name].astype("<f8").tobytes())
    parts.append(struct.pack("<Q", rng_state))
    parts.append(struct.pack("<I", epoch))
    blob = b"".join(parts)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        raw = self.take(8 * n)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(path):
    """Returns (config_text, params, adam_state, rng_state, epoch).

    ``params`` is name -> ndarray; ``adam_state`` a dict with t, hyper
    parameters, and the m/v moment dicts.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{path}: CRC mismatch, checkpoint is corrupted")
    r = _Reader(blob[:-4])
    r.take(4)  # magic
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    config_text = r.string()
    count = r.u32()
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.string()
        ndim = r.u32()
        shape = tuple(struct.unpack(f"<{ndim}I", r.take(4 * ndim)))
        params[name] = r.array(shape)
    t = r.u64()
    lr, beta1, beta2, eps, grad_clip = struct.unpack("<5d", r.take(40))
    m = {name: r.array(arr.shape) for name, arr in params.items()}
    v = {name: r.array(arr.shape) for name, arr in params.items()}
    rng_state = r.u64()
    epoch = r.u32()
    adam_state = {
        "t": t,
        "lr": lr,
        "beta1": beta1,
        "beta2": beta2,
        "eps": eps,
        "grad_clip": grad_clip,
        "m": m,
        "v": v,
    }
    return config_text, params, adam_state, rng_state, epoch


def restore_model(model, params: dict[str, np.ndarray]) -> None:
    own = model.param_dict()
    if set(own) != set(params):
        missing = set(own) ^ set(params)
        raise CheckpointError(f"parameter names do not match the model: {sorted(missing)[:5]}")
    for name, arr in params.items():
        if own[name].shape != arr.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: model {own[name].shape}, file {arr.shape}"
            )
        own[name].data[...] = arr


def restore_optimizer(optimizer: Adam, adam_state: dict) -> None:
    optimizer.t = int(adam_state["t"])
    optimizer.lr = adam_state["lr"]
    optimizer.beta1 = adam_state["beta1"]
    optimizer.beta2 = adam_state["beta2"]
    optimizer.eps = adam_state["eps"]
    optimizer.grad_clip = adam_state["grad_clip"]
    for name in optimizer.m:
        optimizer.m[name][...] = adam_state["m"][name]
        optimizer.v[name][...] = adam_state["v"][name]
