"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"LFLOWCKP"  u32 version  u32 n_sections
    n_sections x ( u32 name_len, name (utf-8), u8 tag, body )
    u32 crc32 of every preceding byte

Section bodies by tag: ``f`` / ``u`` are float64 / uint64 arrays
(``u32 ndim, ndim x u64 dims, data``); ``t`` is text (``u64 len, utf-8``).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..optim import OptimizerState

MAGIC = b"LFLOWCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    opt_state: OptimizerState
    rng_state: tuple
    step: int
    holdout_history: list[float] = field(default_factory=list)
    version: int = VERSION

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.version == other.version
            and self.config == other.config
            and self.step == other.step
            and _rng_key(self.rng_state) == _rng_key(other.rng_state)
            and _same_arrays(self.params, other.params)
            and _same_opt(self.opt_state, other.opt_state)
            and _bits(np.asarray(self.holdout_history, float)) == _bits(np.asarray(other.holdout_history, float))
        )


def _rng_key(state) -> tuple:
    seed, stream, counter = state
    return int(seed), tuple(int(s) for s in stream), int(counter)


def _bits(a: np.ndarray) -> tuple:
    a = np.ascontiguousarray(a, dtype=np.float64)
    return a.shape, a.tobytes()


def _same_arrays(a: dict, b: dict) -> bool:
    return list(a) == list(b) and all(_bits(a[k]) == _bits(b[k]) for k in a)


def _same_opt(a: OptimizerState, b: OptimizerState) -> bool:
    scal = ("kind", "lr", "beta1", "beta2", "eps", "t")
    return all(getattr(a, s) == getattr(b, s) for s in scal) and _same_arrays(a.m, b.m) and _same_arrays(a.v, b.v)


def _pack_array(tag: bytes, arr: np.ndarray) -> bytes:
    dt = "<f8" if tag == b"f" else "<u8"
    arr = np.ascontiguousarray(arr, dtype=dt)
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return tag + head + arr.tobytes()


def _pack_text(text: str) -> bytes:
    raw = text.encode("utf-8")
    return b"t" + struct.pack("<Q", len(raw)) + raw


def _sections(ck: Checkpoint) -> list[tuple[str, bytes]]:
    seed, stream, counter = ck.rng_state
    opt = ck.opt_state
    meta = {"kind": opt.kind, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
            "eps": opt.eps, "m_keys": list(opt.m), "v_keys": list(opt.v)}
    out = [
        ("config", _pack_text(json.dumps(ck.config, sort_keys=True))),
        ("optim", _pack_text(json.dumps(meta))),
        ("counters", _pack_array(b"u", np.array([ck.step, opt.t, seed, counter], dtype=np.uint64))),
        ("rng.stream", _pack_array(b"u", np.array(stream, dtype=np.uint64))),
        ("holdout", _pack_array(b"f", np.asarray(ck.holdout_history, dtype=np.float64))),
    ]
    out += [(f"param/{k}", _pack_array(b"f", v)) for k, v in ck.params.items()]
    out += [(f"m/{k}", _pack_array(b"f", v)) for k, v in opt.m.items()]
    out += [(f"v/{k}", _pack_array(b"f", v)) for k, v in opt.v.items()]
    return out


def dumps(ck: Checkpoint) -> bytes:
    secs = _sections(ck)
    body = bytearray(MAGIC + struct.pack("<II", ck.version, len(secs)))
    for name, payload in secs:
        raw = name.encode("utf-8")
        body += struct.pack("<I", len(raw)) + raw + payload
    return bytes(body) + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(raw: bytes) -> Checkpoint:
    if len(raw) < len(MAGIC) + 12 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a latentflow checkpoint")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointChecksumError("checksum mismatch; file is corrupted")
    r = _Reader(body)
    r.take(len(MAGIC))
    version, n = r.unpack("<II")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {VERSION}")
    secs = {}
    for _ in range(n):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        tag = r.take(1)
        if tag == b"t":
            (ln,) = r.unpack("<Q")
            secs[name] = r.take(ln).decode("utf-8")
        elif tag in (b"f", b"u"):
            (ndim,) = r.unpack("<I")
            shape = r.unpack(f"<{ndim}Q")
            count = int(np.prod(shape, dtype=np.int64))
            dt = "<f8" if tag == b"f" else "<u8"
            arr = np.frombuffer(r.take(8 * count), dtype=dt).reshape(shape)
            secs[name] = arr.astype(np.float64 if tag == b"f" else np.uint64)
        else:
            raise CheckpointError(f"unknown section tag {tag!r} in {name!r}")
    meta = json.loads(secs["optim"])
    step, t, seed, counter = (int(v) for v in secs["counters"])
    opt = OptimizerState(kind=meta["kind"], lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"],
                         eps=meta["eps"], t=t,
                         m={k: secs[f"m/{k}"] for k in meta["m_keys"]},
                         v={k: secs[f"v/{k}"] for k in meta["v_keys"]})
    params = {k[len("param/"):]: v for k, v in secs.items() if k.startswith("param/")}
    return Checkpoint(
        config=json.loads(secs["config"]),
        params=params,
        opt_state=opt,
        rng_state=(seed, tuple(int(s) for s in secs["rng.stream"]), counter),
        step=step,
        holdout_history=[float(v) for v in secs["holdout"]],
        version=version,
    )


def save_checkpoint(path, ck: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read())
