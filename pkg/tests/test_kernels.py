"""Kernel identities, dual-route cross-checks, and quadrature oracles.

Oracles here are coded from scratch on purpose: a brute-force image sum for
the wrapped Gaussian, an FFT circular convolution for the semigroup law (the
package computes powers of the one-step symbol instead), and a 10^4-point
trapezoid rule for the bridge weight.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import exp1

from rangeldp.kernels import (
    NonpositiveTime,
    PhiQuad,
    SingularInput,
    gauss_kernel,
    grid_coords,
    hitting_target_free,
    hitting_target_torus,
    kernel_lclt_gap,
    lclt_error_bound,
    phi_eps,
    rw_torus_kernel,
    rw_torus_kernel_table,
    step_table,
    torus_gauss_fourier,
    torus_gauss_kernel,
)
from rangeldp.steps import make_step_distribution
from rangeldp.torus import TorusConfig

CFG = TorusConfig.from_scales(4.0, 100.0)  # L = 40, h = 0.1
CFG_UNIT = TorusConfig.from_scales(1.0, 100.0)
DIST = make_step_distribution("default-aperiodic")


def brute_wrap(t: float, x, N: float, mmax: int = 50) -> float:
    """Oversummed wrapped Gaussian, plain loops, no shared code."""
    x0, x1 = float(x[0]), float(x[1])
    total = 0.0
    for zx in range(-mmax, mmax + 1):
        for zy in range(-mmax, mmax + 1):
            d2 = (x0 + N * zx) ** 2 + (x1 + N * zy) ** 2
            total += math.exp(-d2 / (2.0 * t))
    return total / (2.0 * math.pi * t)


def test_gauss_kernel_spot_values():
    assert gauss_kernel(1.0, (0.0, 0.0)) == pytest.approx(1.0 / (2 * math.pi))
    assert gauss_kernel(2.0, (2.0, 0.0)) == pytest.approx(math.exp(-1.0) / (4 * math.pi))


def test_gauss_kernel_normalizes():
    # radial reduction: Int_0^inf 2 pi r p_t(r) dr
    val, _ = quad(lambda r: r * math.exp(-(r * r) / 4.0) / 2.0, 0.0, np.inf)
    assert val == pytest.approx(1.0, abs=1e-10)
    grid = np.linspace(-10, 10, 2001)
    gx, gy = np.meshgrid(grid, grid)
    pts = np.stack([gx, gy], axis=-1)
    riemann = gauss_kernel(1.0, pts).sum() * (grid[1] - grid[0]) ** 2
    assert riemann == pytest.approx(1.0, abs=1e-10)


def test_nonpositive_time_rejected():
    with pytest.raises(NonpositiveTime):
        gauss_kernel(0.0, (1.0, 0.0))
    with pytest.raises(NonpositiveTime):
        torus_gauss_kernel(-1.0, np.array([0.1, 0.0]), CFG)


def test_wrapped_kernel_matches_brute_force():
    for t, x in [(0.1, (0.0, 0.0)), (0.03, (0.2, -0.4)), (1.7, (0.49, 0.31))]:
        mine = float(torus_gauss_kernel(t, np.array(x), CFG_UNIT, tol=1e-13))
        ref = brute_wrap(t, x, CFG_UNIT.N)
        assert mine == pytest.approx(ref, rel=1e-12)


def test_wrapped_kernel_equidistributes():
    v = float(torus_gauss_kernel(100.0, np.array([0.37, -0.12]), CFG_UNIT))
    assert v == pytest.approx(1.0, abs=1e-8)


def test_wrapped_kernel_free_limit():
    big = TorusConfig.from_scales(12.0, 100.0)
    x = np.array([0.7, -0.4])
    assert float(torus_gauss_kernel(0.5, x, big)) == pytest.approx(
        float(gauss_kernel(0.5, x)), abs=1e-13
    )


def test_wrapped_kernel_fourier_dual():
    x = np.array([[0.3, -1.2], [1.9, 1.9], [0.0, 0.0]])
    for t in (0.5, 3.0, 20.0):
        a = torus_gauss_kernel(t, x, CFG)
        b = torus_gauss_fourier(t, x, CFG)
        assert np.max(np.abs(a - b) / b) < 1e-12


def test_wrapped_kernel_grid_normalization():
    cfg = TorusConfig.from_scales(4.0, 10000.0)
    total = torus_gauss_kernel(0.7, grid_coords(cfg), cfg).sum() * cfg.h**2
    assert total == pytest.approx(1.0, abs=1e-6)


def test_step_table_mass_and_support():
    tab = step_table(DIST, CFG)
    assert tab.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.count_nonzero(tab) == len(DIST.atoms)


def test_k0_is_identity():
    tab = rw_torus_kernel_table(0, DIST, CFG)
    assert tab[0, 0] == 1.0 and tab.sum() == 1.0
    assert rw_torus_kernel(0, (3, 1), (3, 1), DIST, CFG) == 1.0
    assert rw_torus_kernel(0, (3, 1), (3, 2), DIST, CFG) == 0.0


def test_k1_recovers_step_weights():
    for (dx, dy), w in zip(DIST.atoms, DIST.weights):
        assert rw_torus_kernel(1, (0, 0), (dx, dy), DIST, CFG) == pytest.approx(w)


def test_row_sums_unit():
    for k in (1, 7, 64, 500):
        tab = rw_torus_kernel_table(k, DIST, CFG)
        assert abs(tab.sum() - 1.0) < 1e-12
        assert tab.min() >= 0.0


def test_dp_and_fft_routes_agree():
    from rangeldp.kernels import _table_dp, _table_fft

    for k in (3, 29):
        assert np.abs(_table_dp(k, DIST, CFG) - _table_fft(k, DIST, CFG)).max() < 1e-14


def test_chapman_kolmogorov():
    t20 = rw_torus_kernel_table(20, DIST, CFG)
    t35 = rw_torus_kernel_table(35, DIST, CFG)
    t55 = rw_torus_kernel_table(55, DIST, CFG)
    conv = np.fft.ifft2(np.fft.fft2(t20) * np.fft.fft2(t35)).real
    assert np.abs(conv - t55).max() < 1e-10


def test_kernel_symmetric_in_endpoints():
    L = CFG.L
    for k in (5, 300):
        tab = rw_torus_kernel_table(k, DIST, CFG)
        mirror = tab[(-np.arange(L)) % L][:, (-np.arange(L)) % L]
        assert np.abs(tab - mirror).max() < 1e-15
    assert rw_torus_kernel(7, (1, 2), (3, -1), DIST, CFG) == pytest.approx(
        rw_torus_kernel(7, (3, -1), (1, 2), DIST, CFG), abs=1e-15
    )


def test_lclt_gap_shrinks_with_n():
    gaps = []
    for n in (10**3, 10**4, 10**5):
        cfg = TorusConfig.from_walk_length(4.0, n)
        gaps.append(kernel_lclt_gap(DIST, cfg, 1.0))
    assert gaps[0] > gaps[1] > gaps[2]
    # decay strictly faster than 1/T, consistent with a T^(-1-delta) envelope
    t_small = TorusConfig.from_walk_length(4.0, 10**3).T
    t_big = TorusConfig.from_walk_length(4.0, 10**5).T
    assert gaps[2] / gaps[0] < t_small / t_big


def test_lclt_error_bound_branches():
    assert lclt_error_bound(1e4, (0.0, 0.0), (0.0, 0.0)) == pytest.approx(1e-8)
    assert lclt_error_bound(1e4, (0.0, 0.0), (1e3, 0.0)) == pytest.approx(1e-10)
    ts = np.linspace(1.0, 50.0, 25)
    vals = [lclt_error_bound(t, (0.0, 0.0), (3.0, 4.0)) for t in ts]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        lclt_error_bound(0.5, (0.0, 0.0), (1.0, 0.0))


def phi_trapezoid_oracle(y, z, eps, cfg, points=10**4):
    """Refined-grid trapezoid evaluation with the brute-force kernel."""
    ss = np.linspace(0.0, eps, points + 1)
    f = np.zeros(points + 1)
    for i, s in enumerate(ss):
        if 0.0 < s < eps:
            f[i] = brute_wrap(s, y, cfg.N, mmax=6) * brute_wrap(eps - s, z, cfg.N, mmax=6)
    num = np.trapezoid(f, ss)
    dz = (z[0] - y[0], z[1] - y[1])
    return num / brute_wrap(eps, dz, cfg.N, mmax=6)


def test_phi_eps_spot_value_against_trapezoid():
    y, z = (1.0, 0.0), (-1.0, 0.0)
    mine = phi_eps(y, z, 1.0, CFG)
    ref = phi_trapezoid_oracle(y, z, 1.0, CFG)
    assert mine == pytest.approx(ref, rel=1e-5)


def test_phi_eps_symmetric():
    rng = np.random.default_rng(11)
    for _ in range(6):
        y = rng.uniform(-1.8, 1.8, 2)
        z = rng.uniform(-1.8, 1.8, 2)
        if min(np.hypot(*y), np.hypot(*z)) < 2 * CFG.h:
            continue
        a = phi_eps(y, z, 0.8, CFG)
        b = phi_eps(z, y, 0.8, CFG)
        assert abs(a - b) <= 1e-9 * max(1.0, abs(a))
        assert a >= 0.0


def test_phi_eps_decays_toward_torus_edge():
    vals = [
        phi_eps((d, 0.0), (d, 0.0), 0.25, CFG) for d in (1.0, 1.5, 1.9)
    ]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 1e-8


def test_phi_eps_batched_matches_scalar():
    ys = np.array([[1.0, 0.0], [0.5, 0.5], [-1.2, 0.3]])
    zs = np.array([[-1.0, 0.0], [0.5, -0.5], [0.8, 0.8]])
    batch = phi_eps(ys, zs, 1.0, CFG)
    assert batch.shape == (3,)
    for i in range(3):
        assert batch[i] == pytest.approx(phi_eps(ys[i], zs[i], 1.0, CFG), rel=1e-12)


def test_phi_eps_singular_cutoff():
    with pytest.raises(SingularInput):
        phi_eps((CFG.h / 3, 0.0), (1.0, 0.0), 1.0, CFG)
    with pytest.raises(SingularInput):
        phi_eps((1.0, 0.0), (0.0, 0.0), 1.0, CFG)


def test_phi_eps_quadrature_refinement_stable():
    # doubling panels and nodes moves the value by far less than the
    # 1e-6 relative target
    base = phi_eps((1.0, 0.0), (-0.7, 0.9), 0.6, CFG)
    fine = phi_eps(
        (1.0, 0.0), (-0.7, 0.9), 0.6, CFG, PhiQuad(nodes=24, panels_per_side=20)
    )
    assert base == pytest.approx(fine, rel=1e-9)


def test_hitting_target_free_matches_exponential_integral():
    for a, s in [((1.0, 0.0), 1.0), ((0.5, 0.5), 2.0), ((2.0, 1.0), 0.7)]:
        d2 = a[0] ** 2 + a[1] ** 2
        assert hitting_target_free(a, s) == pytest.approx(
            float(exp1(d2 / (2 * s))), rel=1e-10
        )


def test_hitting_target_torus_exceeds_free():
    a, s = (1.0, 0.0), 1.0
    assert hitting_target_torus(a, s, CFG) > hitting_target_free(a, s)
    # wrap correction is small on a side-4 torus at s = 1
    assert hitting_target_torus(a, s, CFG) == pytest.approx(
        hitting_target_free(a, s), rel=0.02
    )
