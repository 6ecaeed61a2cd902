"""Heat kernels on the plane and on the torus, and the grid walk kernel.

Continuum kernels: the planar Gaussian p_t(x) = exp(-|x|^2/2t)/(2*pi*t) and
its N-periodic wrap, computed as a truncated lattice sum over images with an
explicit tail bound (terms beyond ring m contribute at most
8m * exp(-N^2 (m-1/2)^2 / 2t) / (2*pi*t) summed geometrically).

Grid kernel: the exact k-step transition probabilities of a step law wrapped
on the L x L torus grid, by dynamic-programming convolution for small
problems and by an FFT power of the one-step symbol otherwise (both exact up
to float rounding; cross-checked in tests).

The local-CLT comparison says the k-step grid kernel at scale eps = k/T is
h^2 * wrapped-Gaussian up to an O(T^{-1-delta}) error; ``kernel_lclt_gap``
measures that gap for trend checks.

``phi_eps`` is the limiting bridge weight

    phi_eps(y, z) = Int_0^eps p_s(-y) p_{eps-s}(z) ds / p_eps(z - y)

with all three kernels wrapped.  The integrand decays like exp(-|y|^2/2s)/s
at s -> 0 (and mirrored at s -> eps), so the quadrature uses geometrically
graded Gauss-Legendre panels plus analytic exponential-integral corrections
for the clipped endpoints; inputs with |y| or |z| below one lattice spacing
are refused as singular.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad as _quad
from scipy.special import exp1 as _exp1

from .steps import StepDistribution
from .torus import TorusConfig, OffGrid, wrap, wrap_sites

class NonpositiveTime(ValueError):
    """Heat-kernel time argument must be strictly positive."""


_RING_CACHE: dict[int, np.ndarray] = {}


def _ring(m: int) -> np.ndarray:
    """Integer vectors with sup-norm exactly m (the 8m cells of ring m)."""
    if m == 0:
        return np.zeros((1, 2), dtype=np.int64)
    if m not in _RING_CACHE:
        side = np.arange(-m, m + 1, dtype=np.int64)
        top = np.stack([side, np.full_like(side, m)], axis=1)
        bot = np.stack([side, np.full_like(side, -m)], axis=1)
        mid = np.arange(-m + 1, m, dtype=np.int64)
        lef = np.stack([np.full_like(mid, -m), mid], axis=1)
        rig = np.stack([np.full_like(mid, m), mid], axis=1)
        _RING_CACHE[m] = np.concatenate([top, bot, lef, rig])
    return _RING_CACHE[m]


def gauss_kernel(t: float, x) -> np.ndarray:
    """Planar heat kernel exp(-|x|^2 / 2t) / (2 pi t); x is (..., 2)."""
    if t <= 0:
        raise NonpositiveTime("time must be positive")
    x = np.asarray(x, dtype=np.float64)
    d2 = np.sum(x * x, axis=-1)
    return np.exp(-d2 / (2.0 * t)) / (2.0 * math.pi * t)


def torus_gauss_kernel(t: float, x, cfg: TorusConfig, tol: float = 1e-12) -> np.ndarray:
    """Wrapped Gaussian kernel on the side-N torus, relative tolerance tol.

    Sums images ring by ring; stops once the last computed ring and the
    analytic bound on everything beyond it are below tol times the running
    total (or once further terms underflow to zero).
    """
    if t <= 0:
        raise NonpositiveTime("time must be positive")
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 1
    xw = wrap(x, cfg).reshape(-1, 2)
    N = cfg.N
    inv = 1.0 / (2.0 * math.pi * t)
    two_t = 2.0 * t
    total = inv * np.exp(-np.sum(xw * xw, axis=-1) / two_t)
    # rings beyond this underflow to exactly zero in float64
    m_hard = int(math.ceil(math.sqrt(two_t * 800.0) / N)) + 2
    for m in range(1, m_hard + 1):
        offs = _ring(m) * N
        d = xw[:, None, :] + offs[None, :, :]
        ring = inv * np.exp(-np.sum(d * d, axis=-1) / two_t).sum(axis=1)
        total = total + ring
        floor = tol * float(total.min())
        if float(ring.max()) <= floor:
            r = 2.0 * math.exp(-N * N * (m + 1) / t)
            bound = 8 * (m + 1) * inv * math.exp(-N * N * (m + 0.5) ** 2 / two_t)
            if r < 0.5 and bound / (1.0 - r) <= floor:
                break
    return total[0] if scalar else total.reshape(x.shape[:-1])


def torus_gauss_fourier(t: float, x, cfg: TorusConfig, tol: float = 1e-14) -> np.ndarray:
    """Dual (Poisson-summation) evaluation of the wrapped Gaussian.

    Independent route kept for cross-checks; converges fast for large t.
    """
    if t <= 0:
        raise NonpositiveTime("time must be positive")
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 1
    xw = np.atleast_2d(wrap(x, cfg))
    N = cfg.N
    kmax = 1
    while math.exp(-2.0 * math.pi**2 * kmax**2 * t / N**2) > tol:
        kmax += 1
    ks = np.arange(-kmax, kmax + 1)
    kx, ky = np.meshgrid(ks, ks, indexing="ij")
    kk = np.stack([kx.ravel(), ky.ravel()], axis=1).astype(np.float64)
    damp = np.exp(-2.0 * math.pi**2 * np.sum(kk * kk, axis=1) * t / N**2)
    phase = np.cos((2.0 * math.pi / N) * (xw @ kk.T))
    total = (phase * damp).sum(axis=1) / N**2
    return total[0] if scalar else total.reshape(x.shape[:-1])


def step_table(dist: StepDistribution, cfg: TorusConfig) -> np.ndarray:
    """One-step law wrapped onto the L x L grid; index [i, j] = x, y mod L."""
    L = cfg.L
    tab = np.zeros((L, L))
    for (dx, dy), w in zip(dist.atoms, dist.weights):
        tab[dx % L, dy % L] += w
    return tab


def _table_dp(k: int, dist: StepDistribution, cfg: TorusConfig) -> np.ndarray:
    out = np.zeros((cfg.L, cfg.L))
    out[0, 0] = 1.0
    for _ in range(k):
        nxt = np.zeros_like(out)
        for (dx, dy), w in zip(dist.atoms, dist.weights):
            nxt += w * np.roll(np.roll(out, dx, axis=0), dy, axis=1)
        out = nxt
    return out


def _table_fft(k: int, dist: StepDistribution, cfg: TorusConfig) -> np.ndarray:
    lam = np.fft.fft2(step_table(dist, cfg))
    # symmetric laws have a real symbol; the imaginary part is rounding
    lam = lam.real
    out = np.fft.ifft2(lam**k).real
    np.clip(out, 0.0, None, out=out)
    return out


def rw_torus_kernel_table(k: int, dist: StepDistribution, cfg: TorusConfig) -> np.ndarray:
    """Exact k-step distribution of the wrapped walk started at the origin.

    Entry [i, j] is P(S_k = (i, j) mod L).  Translation invariance turns this
    single table into the full transition kernel.
    """
    if k < 0:
        raise ValueError("step count must be nonnegative")
    if cfg.L * cfg.L > 256 * 256 or k > 256:
        return _table_fft(k, dist, cfg)
    return _table_dp(k, dist, cfg)


def rw_torus_kernel(k: int, a, b, dist: StepDistribution, cfg: TorusConfig) -> float:
    """P(S_k = b | S_0 = a) on the wrapped grid; a, b integer lattice sites."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != (2,) or b.shape != (2,):
        raise OffGrid("sites must be integer pairs in lattice units")
    tab = rw_torus_kernel_table(k, dist, cfg)
    off = (b - a) % cfg.L
    return float(tab[off[0], off[1]])


def lclt_error_bound(t: float, x, y, c: float = 1.0) -> float:
    """Local-CLT error envelope c * min(t^-2, |x-y|^-2 t^-1), t >= 1.

    The constant c = 1 is a documented normalization, not a fitted value.
    """
    if t < 1:
        raise ValueError("bound stated for t >= 1")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d2 = float(np.sum((x - y) ** 2))
    if d2 == 0.0:
        return c / t**2
    return c * min(1.0 / t**2, 1.0 / (d2 * t))


def grid_coords(cfg: TorusConfig) -> np.ndarray:
    """Continuum coordinates of all grid sites, shape (L, L, 2), origin first."""
    sides = wrap_sites(np.arange(cfg.L), cfg).astype(np.float64) * cfg.h
    gx, gy = np.meshgrid(sides, sides, indexing="ij")
    return np.stack([gx, gy], axis=-1)


def kernel_lclt_gap(dist: StepDistribution, cfg: TorusConfig, eps: float) -> float:
    """max over grid sites of |k-step kernel - h^2 * wrapped Gaussian|.

    k = round(eps * T); the continuum kernel is evaluated at the embedded
    time k/T so the comparison is self-consistent at finite n.
    """
    k = int(round(eps * cfg.T))
    if k < 1:
        raise ValueError("eps * T below one step")
    tab = rw_torus_kernel_table(k, dist, cfg)
    cont = torus_gauss_kernel(k / cfg.T, grid_coords(cfg), cfg, tol=1e-12)
    return float(np.abs(tab - cont * cfg.h**2).max())


@dataclass(frozen=True)
class PhiQuad:
    """Quadrature controls for ``phi_eps``.

    Panels are graded geometrically from both clipped endpoints toward the
    midpoint; delta_frac sets the clip at delta = delta_frac * eps.
    """

    nodes: int = 16
    panels_per_side: int = 12
    delta_frac: float = 1e-4
    kernel_tol: float = 1e-12


class SingularInput(ValueError):
    """phi_eps argument within one lattice spacing of the puncture."""


def _e1_images(point: np.ndarray, delta: float, cfg: TorusConfig) -> np.ndarray:
    """Sum over near images of E1(|point + N z|^2 / (2 delta)) / (2 pi).

    Equals Int_0^delta wrapped-kernel(s, point) ds up to images further than
    one period, whose E1 arguments make them vanish at double precision.
    """
    imgs = np.concatenate([_ring(0), _ring(1)]) * cfg.N
    d2 = np.sum((point[..., None, :] + imgs) ** 2, axis=-1)
    return _exp1(d2 / (2.0 * delta)).sum(axis=-1) / (2.0 * math.pi)


def _gl_panels(a: float, b: float, panels: int, nodes: int, grade_toward_a: bool):
    """Gauss-Legendre nodes/weights on [a, b] split into geometric panels."""
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    # geometric edges accumulating from the graded end
    fracs = np.geomspace(1.0, 2.0**panels, panels + 1) - 1.0
    fracs /= fracs[-1]
    if grade_toward_a:
        edges = a + (b - a) * fracs
    else:
        edges = b - (b - a) * fracs[::-1]
    nodes_all, weights_all = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        nodes_all.append(0.5 * (hi + lo) + half * xs)
        weights_all.append(half * ws)
    return np.concatenate(nodes_all), np.concatenate(weights_all)


def phi_eps(y, z, eps: float, cfg: TorusConfig, quad: PhiQuad | None = None) -> np.ndarray:
    """Limiting bridge weight phi_eps(y, z); y, z broadcastable (..., 2).

    Symmetric in (y, z) and positive on admissible inputs.  Raises
    SingularInput when either argument is within one lattice spacing of the
    origin (the weight diverges logarithmically there).
    """
    if quad is None:
        quad = PhiQuad()
    if eps <= 0:
        raise ValueError("eps must be positive")
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    y, z = np.broadcast_arrays(y, z)
    shape = y.shape[:-1]
    yw = wrap(y, cfg).reshape(-1, 2)
    zw = wrap(z, cfg).reshape(-1, 2)
    cut = cfg.h
    if float(np.min(np.sum(yw * yw, axis=-1))) < cut * cut or float(
        np.min(np.sum(zw * zw, axis=-1))
    ) < cut * cut:
        raise SingularInput("phi_eps argument inside the lattice-spacing cutoff")

    delta = quad.delta_frac * eps
    sl, wl = _gl_panels(delta, eps / 2.0, quad.panels_per_side, quad.nodes, True)
    sr, wr = _gl_panels(eps / 2.0, eps - delta, quad.panels_per_side, quad.nodes, False)
    s_nodes = np.concatenate([sl, sr])
    s_weights = np.concatenate([wl, wr])

    num = np.zeros(yw.shape[0])
    for s, w in zip(s_nodes, s_weights):
        num += w * torus_gauss_kernel(s, yw, cfg, quad.kernel_tol) * torus_gauss_kernel(
            eps - s, zw, cfg, quad.kernel_tol
        )
    # analytic endpoint corrections: the clipped mass Int_0^delta decays like
    # an exponential integral of the nearest-image distance
    num += torus_gauss_kernel(eps, zw, cfg, quad.kernel_tol) * _e1_images(yw, delta, cfg)
    num += torus_gauss_kernel(eps, yw, cfg, quad.kernel_tol) * _e1_images(zw, delta, cfg)

    den = torus_gauss_kernel(eps, zw - yw, cfg, quad.kernel_tol)
    out = num / den
    return out.reshape(shape) if shape else float(out[0])


def hitting_target_free(a, s: float) -> float:
    """2 pi Int_0^s p_t(a) dt for the free plane, by adaptive quadrature."""
    a = np.asarray(a, dtype=np.float64)
    d2 = float(np.sum(a * a))
    if d2 == 0.0 or s <= 0:
        raise ValueError("need a nonzero target and positive horizon")

    def f(t: float) -> float:
        return math.exp(-d2 / (2.0 * t)) / t if t > 0 else 0.0

    val, _ = _quad(f, 0.0, s, limit=200)
    return val


def hitting_target_torus(a, s: float, cfg: TorusConfig, tol: float = 1e-12) -> float:
    """2 pi Int_0^s wrapped-kernel_t(a) dt on the torus."""
    a = np.asarray(a, dtype=np.float64)

    def f(t: float) -> float:
        if t <= 0:
            return 0.0
        return 2.0 * math.pi * float(torus_gauss_kernel(t, a, cfg, tol))

    val, _ = _quad(f, 0.0, s, limit=200)
    return val
