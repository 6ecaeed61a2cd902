"""numba primitives shared by the hot loops.

Mirrors rng.stream_key / rng.state_words exactly (property-tested) so that
jitted kernels can derive per-replica xoshiro256** generators on the fly from
a parent stream key, keeping results independent of thread scheduling.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import njit

U64 = np.uint64
_GAMMA = U64(0x9E3779B97F4A7C15)


@njit(numba.uint64(numba.uint64), cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    return z ^ (z >> U64(31))


@njit(numba.uint64(numba.uint64, numba.uint64), cache=True, inline="always")
def child_key(parent, ix):
    return mix64(parent ^ mix64(ix + _GAMMA))


@njit(cache=True)
def init_state(key, state):
    """Fill a 4-word xoshiro256** state from splitmix64(key)."""
    s = key
    for i in range(4):
        s = s + _GAMMA
        state[i] = mix64(s)
    if state[0] | state[1] | state[2] | state[3] == U64(0):
        state[0] = U64(1)


@njit(numba.uint64(numba.uint64[:]), cache=True, inline="always")
def next64(s):
    # xoshiro256**
    x = s[1] * U64(5)
    result = ((x << U64(7)) | (x >> U64(57))) * U64(9)
    t = s[1] << U64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = (s[3] << U64(45)) | (s[3] >> U64(19))
    return result


@njit(numba.float64(numba.uint64[:]), cache=True, inline="always")
def next_double(s):
    return (next64(s) >> U64(11)) * 1.1102230246251565e-16  # 2**-53


@njit(numba.int64(numba.uint64[:], numba.float64[:]), cache=True, inline="always")
def draw_index(s, cdf):
    """Inverse-CDF draw over a small atom set; cdf[-1] is 1 up to rounding."""
    u = next_double(s)
    for i in range(cdf.shape[0] - 1):
        if u < cdf[i]:
            return i
    return cdf.shape[0] - 1
