"""Scales and geometry for the torus picture of a length-n walk.

A walk of length n is viewed on the torus of side N at lattice spacing
h = T^{-1/2}, where tau = log n is the large-deviation speed and
T = n / log n is the scale of the mean range.  Continuum points live in
[-N/2, N/2)^2; grid points are h * Z^2 wrapped onto the torus.

The wrapped grid must tile the torus exactly, so the side count is
L = round(N * sqrt(T)) and the effective side is N_eff = L * h (equal to the
requested N whenever N * sqrt(T) is integral, as in all documented examples).
All geometry in this package uses the effective side.

Projections between the plane and the grid:

* ``project_plus(x)``  -> floor(x * sqrt(T)) in Z^2 (free lattice point),
* ``project_minus(x)`` -> floor first, then wrap: the grid point of the torus
  carrying x.  Floor-before-wrap makes the map idempotent on grid points;
  the opposite order was considered and rejected (see Design notes in the
  repository).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class BadScales(ValueError):
    """Raised when (N, n) give a torus too coarse for the grid picture."""


@dataclass(frozen=True)
class TorusConfig:
    """Derived scales for walk length n on the side-N torus.

    Attributes
    ----------
    n : walk length (None when built from explicit scales)
    tau : large-deviation speed log(n) (None if not supplied)
    T : mean-range scale n / log(n)
    L : grid sites per side, round(N_requested * sqrt(T)), at least 8
    N : effective continuum side L * h
    h : lattice spacing T**-0.5
    """

    n: int | None
    tau: float | None
    T: float
    L: int
    N_requested: float

    @staticmethod
    def from_walk_length(N: float, n: int) -> "TorusConfig":
        if n < 3:
            raise BadScales(f"walk length {n} gives tau = log n <= 1")
        if N <= 0:
            raise BadScales("torus side must be positive")
        tau = math.log(n)
        T = n / tau
        L = round(N * math.sqrt(T))
        if L < 8:
            raise BadScales(f"only {L} grid sites per side; need at least 8")
        return TorusConfig(n=n, tau=tau, T=T, L=L, N_requested=float(N))

    @staticmethod
    def from_scales(N: float, T: float, tau: float | None = None) -> "TorusConfig":
        """Kernel-level constructor with explicit scales (no walk length)."""
        if N <= 0 or T <= 0:
            raise BadScales("scales must be positive")
        L = round(N * math.sqrt(T))
        if L < 8:
            raise BadScales(f"only {L} grid sites per side; need at least 8")
        return TorusConfig(n=None, tau=tau, T=float(T), L=L, N_requested=float(N))

    @property
    def h(self) -> float:
        return 1.0 / math.sqrt(self.T)

    @property
    def N(self) -> float:
        return self.L * self.h

    @property
    def sqrtT(self) -> float:
        return math.sqrt(self.T)

    @property
    def q_hole(self) -> float:
        """Hole-cutting radius (log T * log log T)^{-1/2}; needs T > e."""
        lt = math.log(self.T)
        if lt <= 1.0:
            raise BadScales("hole radius undefined: log T <= 1")
        return 1.0 / math.sqrt(lt * math.log(lt))

    def require_tau(self) -> float:
        if self.tau is None:
            raise BadScales("operation needs tau = log n; build from_walk_length")
        return self.tau


def wrap(x, cfg: TorusConfig) -> np.ndarray:
    """Reduce continuum points into [-N/2, N/2)^2 (effective side)."""
    x = np.asarray(x, dtype=np.float64)
    N = cfg.N
    return np.mod(x + N / 2.0, N) - N / 2.0


def project_plus(x, cfg: TorusConfig) -> np.ndarray:
    """Free-lattice projection floor(x * sqrt(T)), int64 pairs."""
    x = np.asarray(x, dtype=np.float64)
    return np.floor(x * cfg.sqrtT).astype(np.int64)


def project_minus(x, cfg: TorusConfig) -> np.ndarray:
    """Grid point of the torus carrying x: floor first, then wrap."""
    return wrap(project_plus(x, cfg) * cfg.h, cfg)


def wrap_sites(sites, cfg: TorusConfig) -> np.ndarray:
    """Reduce integer lattice sites mod L into [-L/2, L/2) per coordinate."""
    sites = np.asarray(sites, dtype=np.int64)
    L = cfg.L
    return np.mod(sites + L // 2, L) - L // 2


class OffGrid(ValueError):
    pass


def grid_index(x, cfg: TorusConfig, tol: float = 1e-9) -> np.ndarray:
    """Indices (mod L, in [0, L)) of grid points given in continuum coords."""
    x = np.asarray(x, dtype=np.float64)
    j = x * cfg.sqrtT
    ji = np.rint(j)
    if np.max(np.abs(j - ji)) > tol * max(1.0, float(np.max(np.abs(j)))):
        raise OffGrid(f"point {x!r} is not on the h-grid")
    return np.mod(ji.astype(np.int64), cfg.L)


def torus_dist(x, y, cfg: TorusConfig) -> np.ndarray:
    """Nearest-image Euclidean distance on the torus."""
    d = wrap(np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64), cfg)
    # the wrap puts each coordinate in [-N/2, N/2), whose absolute value is
    # the nearest-image separation
    return np.sqrt(np.sum(d * d, axis=-1))
