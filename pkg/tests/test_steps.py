"""Step-law validation: error taxonomy, ordering, and sampling fidelity."""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangeldp.rng import RngStream
from rangeldp.steps import (
    PRESETS,
    BadCovariance,
    BadWeights,
    NonSymmetric,
    NotGenerating,
    Periodic,
    StepDistribution,
    make_step_distribution,
    sample_step,
)

SRW = [[1, 0, 1, 4], [-1, 0, 1, 4], [0, 1, 1, 4], [0, -1, 1, 4]]

DIAGONAL = [[1, 1, 1, 4], [-1, -1, 1, 4], [1, -1, 1, 4], [-1, 1, 1, 4]]

# unit covariance, generates Z^2, but every atom has odd parity: period 2
ODD_CHECKER = (
    [[s, 0, 3, 16] for s in (1, -1)]
    + [[0, s, 3, 16] for s in (1, -1)]
    + [[sx, 2 * sy, 1, 32] for sx in (1, -1) for sy in (1, -1)]
    + [[2 * sx, sy, 1, 32] for sx in (1, -1) for sy in (1, -1)]
)


def test_default_preset_is_valid():
    dist = make_step_distribution("default-aperiodic")
    assert isinstance(dist, StepDistribution)
    assert sum(Fraction(w).limit_denominator(10**9) for w in dist.weights) == 1
    assert dist.max_step == 2


def test_preset_dict_form_equivalent():
    a = make_step_distribution("default-aperiodic")
    b = make_step_distribution({"preset": "default-aperiodic"})
    assert a.law_hash() == b.law_hash()


def test_unknown_preset_rejected():
    with pytest.raises((KeyError, ValueError)):
        make_step_distribution("no-such-law")


def test_default_moments():
    dist = make_step_distribution("default-aperiodic")
    a = dist.support.astype(float)
    w = np.asarray(dist.probs)
    assert abs(w @ a[:, 0] ** 2 - 1.0) < 1e-15
    assert abs(w @ a[:, 1] ** 2 - 1.0) < 1e-15
    assert abs(w @ (a[:, 0] * a[:, 1])) < 1e-15
    assert abs(w @ a[:, 0]) < 1e-15


def test_simple_walk_fails_covariance():
    with pytest.raises(BadCovariance):
        make_step_distribution(SRW)


def test_diagonal_walk_fails_generation():
    # covariance is the identity, so the sublattice check must be the one
    # that fires
    with pytest.raises(NotGenerating):
        make_step_distribution(DIAGONAL)


def test_odd_parity_walk_fails_periodicity():
    with pytest.raises(Periodic):
        make_step_distribution(ODD_CHECKER)


def test_missing_mirror_fails_symmetry():
    rows = [[1, 0, 1, 2], [0, 1, 1, 4], [0, -1, 1, 4]]
    with pytest.raises(NonSymmetric):
        make_step_distribution(rows)


def test_unequal_mirror_weights_fail_symmetry():
    rows = [[1, 0, 3, 8], [-1, 0, 1, 8], [0, 1, 1, 4], [0, -1, 1, 4]]
    with pytest.raises(NonSymmetric):
        make_step_distribution(rows)


def test_weight_sum_checked_before_symmetry():
    rows = [[1, 0, 1, 4], [0, 1, 1, 4], [0, -1, 1, 4]]  # sums to 3/4
    with pytest.raises(BadWeights):
        make_step_distribution(rows)


def test_duplicate_atom_rejected():
    rows = [[1, 0, 1, 8], [1, 0, 1, 8], [-1, 0, 1, 4], [0, 1, 1, 4], [0, -1, 1, 4]]
    with pytest.raises(BadWeights):
        make_step_distribution(rows)


def test_nonpositive_weight_rejected():
    rows = [[1, 0, 1, 2], [-1, 0, 1, 2], [0, 1, 0, 4], [0, -1, 0, 4]]
    with pytest.raises(BadWeights):
        make_step_distribution(rows)


def test_float_rows_accepted():
    rows = [(dx, dy, float(w)) for (dx, dy), w in PRESETS["default-aperiodic"]]
    dist = make_step_distribution(rows)
    assert dist.law_hash() == make_step_distribution("default-aperiodic").law_hash()


def test_sampling_reproducible_and_stream_dependent():
    dist = make_step_distribution("default-aperiodic")
    s = RngStream(99, (0,))
    a = sample_step(dist, s, size=64)
    b = sample_step(dist, s, size=64)
    assert np.array_equal(a, b)
    c = sample_step(dist, RngStream(99, (1,)), size=64)
    assert not np.array_equal(a, c)


def test_sampling_frequencies():
    dist = make_step_distribution("default-aperiodic")
    draws = sample_step(dist, RngStream(2024, (5,)), size=200_000)
    atoms = {tuple(a): p for a, p in zip(dist.support.tolist(), dist.probs)}
    assert set(map(tuple, np.unique(draws, axis=0).tolist())) <= set(atoms)
    for atom, p in atoms.items():
        hits = int(np.sum(np.all(draws == atom, axis=1)))
        sigma = np.sqrt(p * (1 - p) * draws.shape[0])
        assert abs(hits - p * draws.shape[0]) < 6 * sigma, atom


@settings(max_examples=20, deadline=None)
@given(st.randoms(use_true_random=False))
def test_atom_order_irrelevant(rnd):
    pairs = PRESETS["default-aperiodic"]
    rows = [(dx, dy, float(w)) for (dx, dy), w in pairs]
    rnd.shuffle(rows)
    dist = make_step_distribution(rows)
    assert set(map(tuple, dist.support.tolist())) == {a for a, _ in pairs}
