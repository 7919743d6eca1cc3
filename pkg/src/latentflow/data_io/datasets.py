from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..ndtensor import Rng


@dataclass
class Dataset:
    items: np.ndarray
    kind: str = "binary"
    holdout: np.ndarray | None = None  # row indices held out

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.float64)
        if self.items.ndim != 2:
            raise ValueError("dataset items must be an N x D matrix")
        if self.kind not in ("binary", "continuous"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "binary" and not np.all((self.items == 0) | (self.items == 1)):
            raise ValueError("binary dataset contains values other than 0 and 1")

    def __len__(self):
        return self.items.shape[0]

    @property
    def dim(self) -> int:
        return self.items.shape[1]

    def split(self, fraction: float = 0.1):
        """Deterministic split: the last ``fraction`` of rows become holdout."""
        if not 0.0 <= fraction < 1.0:
            raise ValueError("holdout fraction must lie in [0, 1)")
        n_hold = int(round(len(self) * fraction))
        cut = len(self) - n_hold
        self.holdout = np.arange(cut, len(self))
        return self.items[:cut], self.items[cut:]


def make_toy_four_points(width: int = 16) -> Dataset:
    """The 2-bit patterns 00, 01, 10, 11, each bit repeated ``width // 2`` times."""
    patterns = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.float64)
    return Dataset(np.repeat(patterns, width // 2, axis=1), "binary")


def make_linear_gaussian_synthetic(W, sigma: float, n: int, rng: Rng) -> Dataset:
    """Rows ``x = W z + sigma * noise`` with ``z`` and noise standard normal."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    z = rng.substream(0).normal((n, W.shape[1]))
    noise = rng.substream(1).normal((n, W.shape[0]))
    return Dataset(z @ W.T + sigma * noise, "continuous")


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxDimensionError(IdxError):
    pass


MAX_IDX_ELEMENTS = 1 << 31


def parse_idx(raw: bytes) -> np.ndarray:
    """Decode an unsigned-byte IDX blob; pixels are scaled to ``[0, 1]``."""
    if len(raw) < 4:
        raise IdxTruncatedError(f"need a 4-byte header, got {len(raw)} bytes")
    zero0, zero1, dtype, ndim = raw[0], raw[1], raw[2], raw[3]
    if zero0 != 0 or zero1 != 0 or dtype != 0x08 or ndim == 0:
        raise IdxMagicError(f"bad IDX magic {raw[:4].hex()}; expected 000008xx with xx > 0")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxTruncatedError(f"header declares {ndim} dims but file has {len(raw)} bytes")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    count = 1
    for d in dims:
        count *= d
        if count > MAX_IDX_ELEMENTS:
            raise IdxDimensionError(f"dims {dims} exceed {MAX_IDX_ELEMENTS} elements")
    payload = raw[header_len:]
    if len(payload) < count:
        raise IdxTruncatedError(f"expected {count} payload bytes, got {len(payload)}")
    if len(payload) > count:
        raise IdxDimensionError(f"dims {dims} cover {count} bytes but payload has {len(payload)}")
    data = np.frombuffer(payload, dtype=np.uint8, count=count)
    return data.reshape(dims).astype(np.float64) / 255.0


def load_idx(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_idx(fh.read())


def binarize(data, mode: str = "threshold", rng: Rng | None = None) -> Dataset:
    """Threshold at 0.5 (ties go to 1) or draw ``Bernoulli(pixel)``."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    x = np.atleast_2d(x)
    if np.any(x < 0) or np.any(x > 1) or not np.all(np.isfinite(x)):
        raise ValueError("binarize expects values in [0, 1]")
    if mode == "threshold":
        out = (x >= 0.5).astype(np.float64)
    elif mode == "stochastic":
        if rng is None:
            raise ValueError("stochastic binarization needs an rng")
        out = rng.bernoulli(x)
    else:
        raise ValueError(f"unknown binarization mode {mode!r}")
    return Dataset(out, "binary")
