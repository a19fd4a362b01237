"""Deterministic RNG and the small dense-array primitives.

The generator is xoshiro256** seeded through splitmix64, so streams are
reproducible bit-for-bit on any platform. Matrices and vectors are plain
float64 numpy arrays.
"""
import math

import numpy as np
from numba import njit

from .errors import ConfigError, ShapeError

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV_2_53 = 2.0 ** -53


def splitmix64(state):
    """Advance a splitmix64 state. Returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


@njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def _xoshiro_fill(s, out):
    s0 = s[0]
    s1 = s[1]
    s2 = s[2]
    s3 = s[3]
    for i in range(out.size):
        out[i] = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    s[0] = s0
    s[1] = s1
    s[2] = s2
    s[3] = s3


class Rng:
    """xoshiro256** generator.

    All sampling methods consume a fixed number of 64-bit draws per value:
    one for uniforms and bounded integers, two for normals (Box-Muller).
    """

    def __init__(self, state):
        state = np.array(state, dtype=np.uint64).reshape(4)
        if not state.any():
            raise ConfigError("xoshiro256** state must not be all zero")
        self._s = state

    @property
    def state(self):
        return tuple(int(w) for w in self._s)

    @state.setter
    def state(self, words):
        self._s = np.array(words, dtype=np.uint64).reshape(4)

    def copy(self):
        return Rng(self._s.copy())

    def next_u64(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = np.empty(n, dtype=np.uint64)
        _xoshiro_fill(self._s, out)
        if size is None:
            return int(out[0])
        return out.reshape(size)

    def random(self, size=None):
        """Uniform doubles in [0, 1) from the top 53 bits of each draw."""
        bits = self.next_u64(1 if size is None else size)
        vals = (np.asarray(bits) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return float(vals.reshape(-1)[0]) if size is None else vals

    def uniform(self, lo=0.0, hi=1.0, size=None):
        if not lo < hi:
            raise ConfigError(f"uniform range requires lo < hi, got [{lo}, {hi})")
        u = self.random(size)
        v = lo + (hi - lo) * np.asarray(u)
        # rounding can land exactly on hi for tiny ranges
        v = np.where(v >= hi, np.nextafter(hi, lo), v)
        return float(v) if size is None else v

    def normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self.random(2 * n).reshape(n, 2)
        z = np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, n, size=None):
        """Integers in [0, n) as floor(u * n)."""
        u = np.asarray(self.random(1 if size is None else size))
        k = np.minimum((u * n).astype(np.int64), n - 1)
        return int(k.reshape(-1)[0]) if size is None else k

    def spawn(self):
        """Derive an independent generator seeded from this stream."""
        return seed_rng(self.next_u64())


def seed_rng(seed):
    state = int(seed) & MASK64
    words = []
    for _ in range(4):
        state, z = splitmix64(state)
        words.append(z)
    return Rng(words)


def sample_uniform(rng, lo, hi):
    return rng.uniform(lo, hi)


def sample_normal(rng, size=None):
    return rng.normal(size)


def glorot_bound(fan_in, fan_out):
    return math.sqrt(6.0 / (fan_in + fan_out))


def matvec(A, x):
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if A.ndim != 2 or x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: matrix {A.shape} incompatible with vector {x.shape}")
    return A @ x


def hadamard(u, h):
    u = np.asarray(u, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if u.shape != h.shape:
        raise ShapeError(f"hadamard: shapes {u.shape} and {h.shape} differ")
    return u * h
