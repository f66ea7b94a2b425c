"""Philox4x32-10 counter-based generator.

Every random number is a pure function of (seed, path index, block, stream),
so a path draws the same numbers no matter how paths are split across
threads or calls.
"""

from __future__ import annotations

import math
import os
import warnings

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_TWO53 = 9007199254740992.0

# numba probes an old system TBB and warns before falling back to OpenMP
warnings.filterwarnings("ignore", message="The TBB threading layer requires")

STREAM_INCREMENTS = 0
STREAM_INITIAL = 1
STREAM_BRIDGE = 2


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on a 4x32-bit counter with a 2x32-bit key."""
    c0 = np.uint64(c0)
    c1 = np.uint64(c1)
    c2 = np.uint64(c2)
    c3 = np.uint64(c3)
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    for i in range(10):
        if i > 0:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> np.uint64(32), p0 & _MASK
        hi1, lo1 = p1 >> np.uint64(32), p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def _u53(a, b):
    return ((a >> np.uint64(5)) * np.uint64(67108864) + (b >> np.uint64(6))) / _TWO53


@nb.njit(cache=True, inline="always")
def uniform_pair(c0, c1, c2, c3, k0, k1):
    """Two uniforms in [0, 1) with 53-bit resolution."""
    a, b, c, d = philox4x32(c0, c1, c2, c3, k0, k1)
    return _u53(a, b), _u53(c, d)


@nb.njit(cache=True, inline="always")
def normal_pair(c0, c1, c2, c3, k0, k1):
    """Two independent standard normals by Box-Muller."""
    u, v = uniform_pair(c0, c1, c2, c3, k0, k1)
    rad = math.sqrt(-2.0 * math.log(1.0 - u))
    ang = 2.0 * math.pi * v
    return rad * math.cos(ang), rad * math.sin(ang)


def split_seed(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


@nb.njit(cache=True)
def _uniforms(indices, stream, k0, k1, out):
    for i in range(indices.size):
        idx = np.uint64(indices[i])
        u, _ = uniform_pair(idx & _MASK, idx >> np.uint64(32), 0, stream, k0, k1)
        out[i] = u


def uniforms(seed: int, indices, stream: int = STREAM_INITIAL) -> np.ndarray:
    """One uniform per index from the given stream."""
    indices = np.ascontiguousarray(indices, dtype=np.uint64)
    k0, k1 = split_seed(seed)
    out = np.empty(indices.size)
    _uniforms(indices, np.uint64(stream), np.uint64(k0), np.uint64(k1), out)
    return out


def configure_threads(threads: int | None = None) -> int:
    """Apply ROOTBARRIER_THREADS (or an explicit count) to numba; returns the count used."""
    if threads is None:
        env = os.environ.get("ROOTBARRIER_THREADS")
        threads = int(env) if env else nb.config.NUMBA_NUM_THREADS
    threads = max(1, min(int(threads), nb.config.NUMBA_NUM_THREADS))
    nb.set_num_threads(threads)
    return threads
