"""Counter-based, splittable random number generation.

A stream is identified by ``(seed, stream_path)``.  The 64-bit key of a
stream is a splitmix64 hash chain over the seed and the path components,
and draw ``k`` of the stream is ``splitmix64(key + k * golden)``.  Because
output depends only on the key and the draw counter, the full state is
three small integers and any substream can be recreated anywhere.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_C1 = 0xBF58476D1CE4E5B9
_C2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _C1) & _MASK
    z = ((z ^ (z >> 27)) * _C2) & _MASK
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_C1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_C2)
    return z ^ (z >> np.uint64(31))


def _derive_key(seed: int, stream: tuple[int, ...]) -> int:
    key = _mix(seed + _GOLDEN)
    for sid in stream:
        key = _mix(key ^ _mix((sid + 1) * _GOLDEN))
    return key


class Rng:
    """Reproducible generator; identical ``(seed, stream)`` gives identical draws."""

    def __init__(self, seed: int, stream: tuple[int, ...] = (), counter: int = 0):
        if not 0 <= seed <= _MASK:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        self.counter = int(counter)
        self._key = _derive_key(self.seed, self.stream)

    def substream(self, *ids: int) -> "Rng":
        return Rng(self.seed, self.stream + tuple(ids))

    @property
    def state(self) -> tuple[int, tuple[int, ...], int]:
        return self.seed, self.stream, self.counter

    @classmethod
    def from_state(cls, state) -> "Rng":
        seed, stream, counter = state
        return cls(seed, tuple(stream), counter)

    def bits(self, n: int) -> np.ndarray:
        """``n`` raw 64-bit outputs."""
        k = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self._key) + k * np.uint64(_GOLDEN)
            return _mix_array(z)

    def uniform(self, shape=()) -> np.ndarray:
        """Uniform draws on the open interval (0, 1)."""
        n = int(np.prod(shape, dtype=np.int64))
        u = ((self.bits(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
        return u.reshape(shape)

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal draws via the Box-Muller transform.

        Consecutive uniforms form the (radius, angle) pairs and both the
        cosine and sine outputs are used, so a longer draw extends a shorter
        one; an odd trailing output is discarded.
        """
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = self.uniform((m, 2))
        r = np.sqrt(-2.0 * np.log(u[:, 0]))
        theta = 2.0 * math.pi * u[:, 1]
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform((n,)), kind="stable")

    def bernoulli(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return (self.uniform(p.shape) < p).astype(np.float64)


def sample_standard_normal(rng: Rng, shape) -> np.ndarray:
    return rng.normal(shape)
