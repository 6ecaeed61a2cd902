"""Scale bookkeeping and torus geometry."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangeldp.torus import (
    BadScales,
    OffGrid,
    TorusConfig,
    grid_index,
    project_minus,
    project_plus,
    torus_dist,
    wrap,
    wrap_sites,
)

CFG = TorusConfig.from_scales(4.0, 100.0)  # L = 40, h = 0.1, N_eff = 4 exactly


def test_from_walk_length_scales():
    cfg = TorusConfig.from_walk_length(4.0, 10**4)
    assert cfg.tau == pytest.approx(math.log(10**4))
    assert cfg.T == pytest.approx(10**4 / math.log(10**4))
    assert cfg.L == round(4.0 * math.sqrt(cfg.T))
    assert cfg.N == pytest.approx(cfg.L * cfg.h)
    assert cfg.h == pytest.approx(cfg.T**-0.5)


def test_from_walk_length_rejects_tiny_n():
    with pytest.raises(BadScales):
        TorusConfig.from_walk_length(4.0, 2)


def test_from_scales_exact_grid():
    assert CFG.L == 40
    assert CFG.N == 4.0
    assert CFG.h == pytest.approx(0.1)
    assert CFG.n is None
    with pytest.raises(BadScales):
        CFG.require_tau()


def test_hole_radius_scale():
    cfg = TorusConfig.from_scales(4.0, math.e**4)
    assert cfg.q_hole == pytest.approx((4.0 * math.log(4.0)) ** -0.5)
    with pytest.raises(BadScales):
        _ = TorusConfig.from_scales(4.0, 2.0).q_hole  # log T < 1


def test_wrap_half_open_interval():
    out = wrap(np.array([2.0, -2.0]), CFG)
    assert out[0] == -2.0 and out[1] == -2.0
    assert np.array_equal(wrap(out, CFG), out)


def test_wrap_periodicity():
    x = np.array([[0.3, -1.2], [1.99, 1.99]])
    for k in (-3, 1, 7):
        assert np.allclose(wrap(x + k * CFG.N, CFG), wrap(x, CFG), atol=1e-9)


def test_projection_examples():
    # floor to the grid, then wrap: 0.37 -> 0.3 stays, 2.05 -> 2.0 wraps
    assert np.array_equal(project_plus(np.array([0.37, 0.0]), CFG), [3, 0])
    assert np.allclose(project_minus(np.array([0.37, 0.0]), CFG), [0.3, 0.0])
    assert np.allclose(project_minus(np.array([2.05, 0.0]), CFG), [-2.0, 0.0])


def test_projection_negative_coordinates():
    assert np.array_equal(project_plus(np.array([-0.01, -1.0]), CFG), [-1, -10])
    assert np.allclose(project_minus(np.array([-0.01, -1.0]), CFG), [-0.1, -1.0])


def test_project_batch_shape():
    pts = np.random.default_rng(0).uniform(-6, 6, size=(50, 2))
    plus = project_plus(pts, CFG)
    assert plus.shape == (50, 2) and plus.dtype == np.int64
    minus = project_minus(pts, CFG)
    assert np.all(minus >= -2.0) and np.all(minus < 2.0)


def test_wrap_sites_half_open():
    sites = np.array([20, -20, 39, 0, 41])
    assert np.array_equal(wrap_sites(sites, CFG), [-20, -20, -1, 0, 1])


def test_grid_index_roundtrip():
    rng = np.random.default_rng(3)
    sites = rng.integers(-100, 100, size=(20, 2))
    coords = wrap(sites * CFG.h, CFG)
    idx = grid_index(coords, CFG)
    assert np.array_equal(idx, sites % CFG.L)


def test_grid_index_rejects_off_grid():
    with pytest.raises(OffGrid):
        grid_index(np.array([0.05, 0.0]), CFG)


def test_torus_dist_nearest_image():
    assert torus_dist(np.array([1.9, 0.0]), np.array([-1.9, 0.0]), CFG) == pytest.approx(0.2)
    assert torus_dist(np.array([0.0, 0.0]), np.array([0.0, 0.0]), CFG) == 0.0


@settings(max_examples=50)
@given(
    st.floats(-100, 100, allow_nan=False),
    st.floats(-100, 100, allow_nan=False),
)
def test_wrap_range_invariant(x, y):
    out = wrap(np.array([x, y]), CFG)
    assert np.all(out >= -CFG.N / 2) and np.all(out < CFG.N / 2)


@settings(max_examples=50)
@given(st.floats(-20, 20, allow_nan=False), st.floats(-20, 20, allow_nan=False))
def test_projection_commutes_with_wrap(x, y):
    # projecting then wrapping equals wrapping the projected continuum point
    p = np.array([x, y])
    lattice = project_plus(p, CFG)
    assert np.allclose(
        project_minus(p, CFG), wrap(lattice.astype(float) * CFG.h, CFG)
    )
