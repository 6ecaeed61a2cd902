"""Monte Carlo estimators for the range of a planar lattice walk.

The range R_n is the number of distinct sites visited in n steps.  Counting
uses an open-addressing hash set over packed 64-bit (x, y) keys: the walk is
streamed, nothing stores the path, and no bounding box is assumed, so the
counter is exact for any step law.  Packing shifts each signed coordinate by
2^31, which keeps zero free to serve as the empty-slot sentinel.

Tail estimation is plain Monte Carlo.  On the scale studied here the target
probability P(R_n <= b n/log n) decays only polynomially in n, so 1e5-1e6
replicas resolve it without importance sampling; the tail kernel stops a
replica as soon as its count exceeds the threshold, which is where almost
all of the work would otherwise go.

Every estimator derives one RNG stream per replica from the caller's stream
and reduces results in replica order, so outputs are bit-reproducible for a
given root seed no matter how the work is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._nb import child_key, draw_index, init_state, mix64, next_double
from .rng import RngStream
from .steps import StepDistribution

__all__ = [
    "RangeSample",
    "TailEstimate",
    "MomentEstimate",
    "HittingEstimate",
    "TooLarge",
    "simulate_range",
    "range_profile",
    "estimate_mean_range",
    "estimate_tail",
    "estimate_moment",
    "exp_functional",
    "estimate_hitting",
    "exact_range_distribution",
    "wilson_interval",
]


class TooLarge(ValueError):
    """Exhaustive enumeration request beyond the supported size."""


@dataclass(frozen=True)
class RangeSample:
    """One simulated range value with its stream key for provenance."""

    n: int
    value: int
    seed_key: int

    def __post_init__(self):
        if not 1 <= self.value <= self.n + 1:
            raise ValueError("range outside [1, n+1]")


@dataclass(frozen=True)
class TailEstimate:
    """Direct-MC estimate of P(R_n <= b * n/log n)."""

    b: float
    n: int
    replicas: int
    hits: int
    p_hat: float
    ci95: tuple[float, float]
    ldp_value: float
    zero_hits: bool

    def csv_row(self, seed: int) -> tuple:
        return ("tail", self.n, self.b, self.replicas, self.ldp_value,
                self.ci95[0], self.ci95[1], seed)


@dataclass(frozen=True)
class MomentEstimate:
    k: float
    n: int
    replicas: int
    estimate: float
    stderr: float

    def csv_row(self, seed: int) -> tuple:
        return ("moment", self.n, self.k, self.replicas, self.estimate,
                self.estimate - self.stderr, self.estimate + self.stderr, seed)


@dataclass(frozen=True)
class HittingEstimate:
    """log(n) * P(site hit before s * n/log n steps), with Wilson CI."""

    s: float
    n: int
    replicas: int
    hits: int
    value: float
    ci95: tuple[float, float]

    def csv_row(self, seed: int) -> tuple:
        return ("hitting", self.n, self.s, self.replicas, self.value,
                self.ci95[0], self.ci95[1], seed)


def wilson_interval(hits: int, total: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total <= 0:
        raise ValueError("need at least one trial")
    p = hits / total
    den = 1.0 + z * z / total
    center = (p + z * z / (2 * total)) / den
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / den
    # algebraically the interval pins to the boundary at 0 or total hits;
    # enforce that exactly so the interval always contains p
    lo = 0.0 if hits == 0 else max(0.0, center - half)
    hi = 1.0 if hits == total else min(1.0, center + half)
    return (lo, hi)


def _law_arrays(dist: StepDistribution):
    sup = dist.support
    return (
        np.ascontiguousarray(sup[:, 0]),
        np.ascontiguousarray(sup[:, 1]),
        np.asarray(dist.cdf, dtype=np.float64),
    )


def _table_capacity(entries: int) -> int:
    # keep load factor below ~0.6 so probe chains stay short
    need = max(64, int(entries * 5 / 3) + 8)
    return 1 << int(need - 1).bit_length()


@njit(cache=True, inline="always")
def _pack(x, y):
    return (np.uint64(x + 2147483648) << np.uint64(32)) | np.uint64(y + 2147483648)


@njit(cache=True, inline="always")
def _insert(table, mask, key):
    """Insert key, return 1 if it was new.  Zero marks an empty slot."""
    idx = mix64(key) & mask
    while True:
        cur = table[idx]
        if cur == np.uint64(0):
            table[idx] = key
            return 1
        if cur == key:
            return 0
        idx = (idx + np.uint64(1)) & mask


@njit(cache=True)
def _walk_range(state, n, dxs, dys, cdf, table, mask, stop_above):
    """Distinct-site count of one walk; early exit once count > stop_above."""
    x = np.int64(0)
    y = np.int64(0)
    count = 1
    _insert(table, mask, _pack(x, y))
    for _ in range(n):
        i = draw_index(state, cdf)
        x += dxs[i]
        y += dys[i]
        count += _insert(table, mask, _pack(x, y))
        if count > stop_above:
            return count
    return count


@njit(cache=True)
def _range_values(job_key, replicas, n, dxs, dys, cdf, cap):
    table = np.zeros(cap, dtype=np.uint64)
    mask = np.uint64(cap - 1)
    state = np.zeros(4, dtype=np.uint64)
    out = np.empty(replicas, dtype=np.int64)
    for r in range(replicas):
        init_state(child_key(job_key, np.uint64(r)), state)
        table[:] = np.uint64(0)
        out[r] = _walk_range(state, n, dxs, dys, cdf, table, mask, n + 2)
    return out


@njit(cache=True)
def _tail_hits(job_key, replicas, n, dxs, dys, cdf, threshold, cap):
    table = np.zeros(cap, dtype=np.uint64)
    mask = np.uint64(cap - 1)
    state = np.zeros(4, dtype=np.uint64)
    hits = 0
    for r in range(replicas):
        init_state(child_key(job_key, np.uint64(r)), state)
        table[:] = np.uint64(0)
        c = _walk_range(state, n, dxs, dys, cdf, table, mask, threshold)
        if c <= threshold:
            hits += 1
    return hits


@njit(cache=True)
def _profile_counts(key, n, dxs, dys, cdf, cap, checkpoints):
    """Counts after each checkpoint step index (0 = origin only)."""
    table = np.zeros(cap, dtype=np.uint64)
    mask = np.uint64(cap - 1)
    state = np.zeros(4, dtype=np.uint64)
    init_state(key, state)
    out = np.empty(len(checkpoints), dtype=np.int64)
    x = np.int64(0)
    y = np.int64(0)
    count = 1
    _insert(table, mask, _pack(x, y))
    j = 0
    while j < len(checkpoints) and checkpoints[j] == 0:
        out[j] = count
        j += 1
    for step in range(1, n + 1):
        i = draw_index(state, cdf)
        x += dxs[i]
        y += dys[i]
        count += _insert(table, mask, _pack(x, y))
        while j < len(checkpoints) and checkpoints[j] == step:
            out[j] = count
            j += 1
    return out


@njit(cache=True)
def _hitting_hits(job_key, replicas, m, tx, ty, dxs, dys, cdf):
    state = np.zeros(4, dtype=np.uint64)
    hits = 0
    for r in range(replicas):
        init_state(child_key(job_key, np.uint64(r)), state)
        x = np.int64(0)
        y = np.int64(0)
        for _ in range(m):
            i = draw_index(state, cdf)
            x += dxs[i]
            y += dys[i]
            if x == tx and y == ty:
                hits += 1
                break
    return hits


def simulate_range(dist: StepDistribution, n: int, rng: RngStream) -> RangeSample:
    """Exact range of a single n-step trajectory."""
    if n < 1:
        raise ValueError("need n >= 1")
    dxs, dys, cdf = _law_arrays(dist)
    cap = _table_capacity(n + 2)
    vals = _range_values(np.uint64(rng.key), 1, n, dxs, dys, cdf, cap)
    return RangeSample(n=n, value=int(vals[0]), seed_key=rng.key)


def range_profile(dist: StepDistribution, n: int, checkpoints, rng: RngStream) -> np.ndarray:
    """Range counts of one trajectory at the given step indices (sorted)."""
    cps = np.asarray(checkpoints, dtype=np.int64)
    if cps.ndim != 1 or np.any(cps < 0) or np.any(cps > n) or np.any(np.diff(cps) < 0):
        raise ValueError("checkpoints must be sorted step indices in [0, n]")
    dxs, dys, cdf = _law_arrays(dist)
    cap = _table_capacity(n + 2)
    # replica-0 stream, so the profile matches simulate_range on the same rng
    return _profile_counts(np.uint64(rng.child(0).key), n, dxs, dys, cdf, cap, cps)


def estimate_mean_range(
    dist: StepDistribution, n: int, replicas: int, rng: RngStream
) -> tuple[float, float]:
    """Sample mean of R_n and its standard error."""
    if replicas < 2:
        raise ValueError("need replicas >= 2 for a standard error")
    dxs, dys, cdf = _law_arrays(dist)
    cap = _table_capacity(n + 2)
    vals = _range_values(np.uint64(rng.key), replicas, n, dxs, dys, cdf, cap)
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(replicas))
    return mean, stderr


def estimate_tail(
    dist: StepDistribution, n: int, b: float, replicas: int, rng: RngStream
) -> TailEstimate:
    """P(R_n <= b * T) by direct MC, T = n/log n; reports -log(p)/log(n)."""
    if b <= 0:
        raise ValueError("need b > 0")
    if n < 3:
        raise ValueError("need n >= 3 so log n > 1")
    tau = math.log(n)
    threshold = int(math.floor(b * n / tau))
    dxs, dys, cdf = _law_arrays(dist)
    cap = _table_capacity(min(threshold + 2, n + 2))
    hits = int(_tail_hits(np.uint64(rng.key), replicas, n, dxs, dys, cdf,
                          threshold, cap))
    p_hat = hits / replicas
    ci = wilson_interval(hits, replicas)
    if hits == 0:
        # one-sided: the run only certifies p below ~1/replicas
        return TailEstimate(b, n, replicas, 0, 0.0, ci,
                            math.log(replicas) / tau, True)
    return TailEstimate(b, n, replicas, hits, p_hat, ci,
                        -math.log(p_hat) / tau, False)


def estimate_moment(
    dist: StepDistribution, n: int, k: float, replicas: int, rng: RngStream
) -> MomentEstimate:
    """Sample mean of R_n^k for fractional moments, k in (0, 1]."""
    if not 0 < k <= 1:
        raise ValueError("k must lie in (0, 1]")
    dxs, dys, cdf = _law_arrays(dist)
    cap = _table_capacity(n + 2)
    vals = _range_values(np.uint64(rng.key), replicas, n, dxs, dys, cdf, cap)
    pows = vals.astype(np.float64) ** k
    est = float(pows.mean())
    stderr = float(pows.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    return MomentEstimate(k=k, n=n, replicas=replicas, estimate=est, stderr=stderr)


def exp_functional(
    dist: StepDistribution, n: int, c: float, replicas: int, rng: RngStream
) -> float:
    """(1/tau) log E[exp(-c (tau/T) R_n)], log-mean-exp with max shift."""
    if c < 0:
        raise ValueError("need c >= 0")
    tau = math.log(n)
    big_t = n / tau
    dxs, dys, cdf = _law_arrays(dist)
    cap = _table_capacity(n + 2)
    vals = _range_values(np.uint64(rng.key), replicas, n, dxs, dys, cdf, cap)
    a = -c * (tau / big_t) * vals.astype(np.float64)
    shift = a.max()
    return float((shift + math.log(np.exp(a - shift).mean())) / tau)


def estimate_hitting(
    dist: StepDistribution,
    x,
    s: float,
    n: int,
    replicas: int,
    rng: RngStream,
) -> HittingEstimate:
    """log(n) times the probability of hitting lattice site x within s*T steps.

    The walk runs on the free lattice; the comparison target is the kernel
    integral 2 pi Int_0^s p_t(x / sqrt(T)) dt.
    """
    tx, ty = int(x[0]), int(x[1])
    if tx == 0 and ty == 0:
        raise ValueError("target must not be the origin")
    tau = math.log(n)
    big_t = n / tau
    if s * big_t < 1:
        raise ValueError("horizon shorter than one step")
    # largest integer strictly below s*T
    m = int(math.ceil(s * big_t)) - 1
    dxs, dys, cdf = _law_arrays(dist)
    hits = int(_hitting_hits(np.uint64(rng.key), replicas, m,
                             np.int64(tx), np.int64(ty), dxs, dys, cdf))
    lo, hi = wilson_interval(hits, replicas)
    return HittingEstimate(s=s, n=n, replicas=replicas, hits=hits,
                           value=tau * hits / replicas,
                           ci95=(tau * lo, tau * hi))


def exact_range_distribution(dist: StepDistribution, n: int) -> np.ndarray:
    """Full law of R_n by exhaustive enumeration; index r holds P(R_n = r).

    Walks with at most 1e8 step sequences are supported (n <= 8 for laws of
    support size up to 9).  Probabilities are accumulated chunkwise in float64
    and sum to 1 up to rounding.
    """
    arity = len(dist.atoms)
    if n < 1 or n > 8 or arity**n > 10**8:
        raise TooLarge(f"{arity}^{n} step sequences exceed the enumeration budget")
    dxs, dys, _ = _law_arrays(dist)
    probs = np.asarray(dist.probs)
    total = arity**n
    out = np.zeros(n + 2)
    chunk = 1 << 19
    powers = arity ** np.arange(n, dtype=np.int64)
    reach = n * dist.max_step  # coordinates stay in [-reach, reach]
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (idx[:, None] // powers[None, :]) % arity
        px = np.concatenate(
            [np.zeros((len(idx), 1), np.int64), np.cumsum(dxs[digits], axis=1)], axis=1
        )
        py = np.concatenate(
            [np.zeros((len(idx), 1), np.int64), np.cumsum(dys[digits], axis=1)], axis=1
        )
        packed = ((px + reach) * (2 * reach + 1) + (py + reach)).astype(np.int32)
        packed.sort(axis=1)
        distinct = 1 + np.count_nonzero(np.diff(packed, axis=1), axis=1)
        weights = np.prod(probs[digits], axis=1)
        out += np.bincount(distinct, weights=weights, minlength=n + 2)[: n + 2]
    return out
