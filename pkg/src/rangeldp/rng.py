"""Deterministic, splittable random streams.

Every stochastic routine in this package draws from a stream identified by a
64-bit root seed plus a path of integer indices (job, replica, ...).  The
derivation is a fixed splitmix64 chain, so results are reproducible across
runs, machines, and thread counts: replica r of job k always sees the stream
``(root, k, r)`` no matter which worker executes it.

Two consumers share the derivation:

* Python-level code gets a ``numpy.random.Generator`` seeded with the stream
  key (PCG64).
* numba kernels get four raw state words for a xoshiro256** generator,
  produced by iterating splitmix64 from the same key (the seeding scheme
  recommended by the xoshiro authors).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 finalizer: a bijective avalanche mix on 64-bit words."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_key(root_seed: int, *path: int) -> int:
    """Derive the 64-bit key of stream ``(root_seed, *path)``.

    The chain is key = mix64(root + GAMMA), then for each index i in the
    path key = mix64(key ^ mix64(i + GAMMA)).  Distinct paths collide with
    probability ~2^-64 per pair.
    """
    key = mix64((root_seed + _GAMMA) & _MASK)
    for ix in path:
        key = mix64(key ^ mix64((ix + _GAMMA) & _MASK))
    return key


def state_words(key: int, n: int = 4) -> np.ndarray:
    """splitmix64 sequence seeded at ``key``: n uint64 words, never all zero."""
    out = np.empty(n, dtype=np.uint64)
    s = key
    for i in range(n):
        s = (s + _GAMMA) & _MASK
        out[i] = mix64(s)
    if not out.any():  # xoshiro forbids the all-zero state
        out[0] = np.uint64(1)
    return out


@dataclass(frozen=True)
class RngStream:
    """Handle for one deterministic stream.

    ``child(i, j, ...)`` extends the path; ``generator()`` yields a numpy
    Generator; ``words()`` yields raw xoshiro seed state for jitted kernels.
    """

    root_seed: int
    path: tuple[int, ...] = field(default=())

    @property
    def key(self) -> int:
        return stream_key(self.root_seed, *self.path)

    def child(self, *path: int) -> "RngStream":
        return RngStream(self.root_seed, self.path + path)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.key))

    def words(self, n: int = 4) -> np.ndarray:
        return state_words(self.key, n)


def replica_states(stream: RngStream, replicas: int) -> np.ndarray:
    """Seed matrix for a batch of replicas: row r is stream.child(r).words().

    Shape (replicas, 4) uint64.  Built eagerly so jitted kernels can assign
    replica r its own generator independent of scheduling order.
    """
    out = np.empty((replicas, 4), dtype=np.uint64)
    for r in range(replicas):
        out[r] = state_words(stream_key(stream.root_seed, *stream.path, r))
    return out
