"""Step laws for planar lattice walks.

A step distribution is a finite set of integer displacement atoms with
positive weights.  Admission requires exactly the hypotheses under which the
range of the walk has mean ~ 2*pi*n/log(n) and the large-deviation machinery
in this package applies:

* weights positive and summing to 1,
* symmetry: the atoms at v and -v carry equal weight,
* identity covariance: sum p*v1^2 = sum p*v2^2 = 1 and sum p*v1*v2 = 0,
* the support generates Z^2 as a group,
* aperiodicity.

Rejection reasons are checked in that order and the first failure is raised,
so a law with several defects reports the earliest one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .rng import RngStream

_TOL_WEIGHT = 1e-12
_TOL_COV = 1e-12
_MAX_PERIOD_WORD = 6  # word length cap for the zero-sum gcd search


class StepDistributionError(ValueError):
    """Base class for step-law admission failures."""


class BadWeights(StepDistributionError):
    pass


class NonSymmetric(StepDistributionError):
    pass


class BadCovariance(StepDistributionError):
    pass


class NotGenerating(StepDistributionError):
    pass


class Periodic(StepDistributionError):
    pass


@dataclass(frozen=True)
class StepDistribution:
    """Validated step law: parallel tuples of atoms and weights.

    Instances are immutable and hashable; ``law_hash`` keys kernel caches.
    Construct through ``make_step_distribution`` (or ``validate`` directly).
    """

    atoms: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]

    @property
    def support(self) -> np.ndarray:
        return np.array(self.atoms, dtype=np.int64)

    @property
    def probs(self) -> np.ndarray:
        return np.array(self.weights, dtype=np.float64)

    @property
    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)

    @property
    def max_step(self) -> int:
        return int(np.abs(self.support).max())

    def law_hash(self) -> str:
        import hashlib

        payload = repr(tuple(zip(self.atoms, self.weights))).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


PRESETS: Mapping[str, tuple[tuple[tuple[int, int], Fraction], ...]] = {
    # Lazy two-scale law: aperiodic (holds still with probability 1/5) with
    # unit coordinate variance from the mix of +-1 and +-2 steps.
    "default-aperiodic": (
        ((0, 0), Fraction(1, 5)),
        ((1, 0), Fraction(1, 10)),
        ((-1, 0), Fraction(1, 10)),
        ((0, 1), Fraction(1, 10)),
        ((0, -1), Fraction(1, 10)),
        ((2, 0), Fraction(1, 10)),
        ((-2, 0), Fraction(1, 10)),
        ((0, 2), Fraction(1, 10)),
        ((0, -2), Fraction(1, 10)),
    ),
}


def _period_via_words(atoms: Sequence[tuple[int, int]]) -> int:
    """gcd of word lengths (up to 6) whose atom sums vanish.

    Symmetric laws always return at even lengths, so the reachable gcd is 1
    or 2; words up to length 6 suffice for supports of bounded diameter.
    """
    reachable = {(0, 0)}
    g = 0
    for length in range(1, _MAX_PERIOD_WORD + 1):
        reachable = {(x + dx, y + dy) for (x, y) in reachable for (dx, dy) in atoms}
        if (0, 0) in reachable:
            g = math.gcd(g, length)
            if g == 1:
                return 1
    return g if g else 0


def _generates_z2(atoms: Sequence[tuple[int, int]]) -> bool:
    """True iff the subgroup of Z^2 generated by the atoms is all of Z^2.

    The generated lattice has index gcd of all 2x2 minors of the atom matrix
    (Smith normal form), so index 1 means full rank with coprime minors.
    """
    g = 0
    for i, (x1, y1) in enumerate(atoms):
        for x2, y2 in atoms[i + 1:]:
            g = math.gcd(g, abs(x1 * y2 - x2 * y1))
            if g == 1:
                return True
    return False


def validate(atoms: Sequence[tuple[int, int]], weights: Sequence[float | Fraction]) -> StepDistribution:
    """Admit a step law or raise the first applicable rejection."""
    if len(atoms) == 0 or len(atoms) != len(weights):
        raise BadWeights("atoms and weights must be non-empty and aligned")
    atoms = tuple((int(a[0]), int(a[1])) for a in atoms)
    if len(set(atoms)) != len(atoms):
        raise BadWeights("duplicate atoms")
    exact = all(isinstance(w, Fraction) for w in weights)
    if any((w <= 0) for w in weights):
        raise BadWeights("weights must be positive")
    total = sum(weights)
    if exact:
        if total != 1:
            raise BadWeights(f"weights sum to {total}, expected exactly 1")
    elif abs(float(total) - 1.0) > _TOL_WEIGHT:
        raise BadWeights(f"weights sum to {float(total)!r}, expected 1 within {_TOL_WEIGHT}")

    wmap = dict(zip(atoms, weights))
    for v, w in wmap.items():
        mv = (-v[0], -v[1])
        if mv not in wmap:
            raise NonSymmetric(f"atom {v} has no mirror {mv}")
        if abs(float(wmap[mv]) - float(w)) > 1e-15:
            raise NonSymmetric(f"atoms {v} and {mv} carry different weights")

    fw = [float(w) for w in weights]
    c11 = sum(w * vx * vx for (vx, _), w in zip(atoms, fw))
    c22 = sum(w * vy * vy for (_, vy), w in zip(atoms, fw))
    c12 = sum(w * vx * vy for (vx, vy), w in zip(atoms, fw))
    if abs(c11 - 1.0) > _TOL_COV or abs(c22 - 1.0) > _TOL_COV or abs(c12) > _TOL_COV:
        raise BadCovariance(
            f"coordinate covariance is [[{c11!r}, {c12!r}], [{c12!r}, {c22!r}]], expected identity"
        )

    if not _generates_z2(atoms):
        raise NotGenerating("support does not generate Z^2")

    period = _period_via_words(atoms)
    if period != 1:
        raise Periodic(f"walk has period {period or '>'}{'' if period else str(_MAX_PERIOD_WORD)}")

    return StepDistribution(atoms=atoms, weights=tuple(fw))


def make_step_distribution(spec: str | Mapping | Iterable) -> StepDistribution:
    """Build a step law from a preset name or an explicit atom table.

    Accepted forms::

        make_step_distribution("default-aperiodic")
        make_step_distribution({"preset": "default-aperiodic"})
        make_step_distribution({"atoms": [[dx, dy, num, den], ...]})
        make_step_distribution([(dx, dy, weight), ...])

    Four-column rows carry exact rational weights num/den; three-column rows
    carry float weights.
    """
    if isinstance(spec, str):
        name = spec
        if name not in PRESETS:
            raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
        pairs = PRESETS[name]
        return validate([p[0] for p in pairs], [p[1] for p in pairs])
    if isinstance(spec, Mapping):
        if "preset" in spec:
            return make_step_distribution(spec["preset"])
        rows = spec["atoms"]
    else:
        rows = list(spec)
    atoms, weights = [], []
    for row in rows:
        row = list(row)
        if len(row) == 4:
            atoms.append((row[0], row[1]))
            weights.append(Fraction(int(row[2]), int(row[3])))
        elif len(row) == 3:
            atoms.append((row[0], row[1]))
            weights.append(float(row[2]))
        else:
            raise BadWeights(f"atom row {row!r} must have 3 or 4 entries")
    return validate(atoms, weights)


def sample_step(dist: StepDistribution, rng: RngStream | np.random.Generator, size: int | None = None):
    """Draw steps by inverse CDF.  Returns a (2,) array or (size, 2) array."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    u = gen.random(size if size is not None else 1)
    idx = np.searchsorted(dist.cdf, u, side="right")
    idx = np.minimum(idx, len(dist.atoms) - 1)
    out = dist.support[idx]
    return out[0] if size is None else out
