import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftilm.errors import InvalidInputError, InvalidMaskError, PathCountError
from ftilm.lattice import (
    BandMask,
    LogProbLattice,
    alignment_logprob,
    brute_force_loss,
    count_paths,
    full_sum_loss,
    iter_alignments,
    loss_gradients,
    restricted_full_sum_loss,
    restricted_loss_gradients,
)
from ftilm.oracles import central_difference, relative_error

from conftest import random_lattice


def test_single_cell_loss():
    lat = LogProbLattice([[-1.0]], np.zeros((1, 0)))
    assert full_sum_loss(lat) == 1.0
    assert brute_force_loss(lat) == 1.0
    assert list(iter_alignments(1, 0)) == [()]


def test_two_frame_one_token():
    # Two alignments, each 0.25 * 0.5 * 0.5.
    lat = LogProbLattice(np.full((2, 2), math.log(0.5)), np.full((2, 1), math.log(0.25)))
    assert len(list(iter_alignments(2, 1))) == 2
    assert brute_force_loss(lat) == pytest.approx(2.0794415416798357, abs=1e-12)
    assert full_sum_loss(lat) == pytest.approx(2.0794415416798357, abs=1e-12)


def test_alignment_counts():
    assert len(list(iter_alignments(3, 2))) == 6
    assert count_paths(3, 2) == 6
    assert count_paths(5, 4) == math.comb(8, 4)


def test_empty_lattice_rejected():
    with pytest.raises(InvalidInputError):
        LogProbLattice(np.zeros((0, 1)), np.zeros((0, 0)))


def test_nan_and_positive_rejected():
    with pytest.raises(InvalidInputError):
        LogProbLattice([[np.nan]], np.zeros((1, 0)))
    with pytest.raises(InvalidInputError):
        LogProbLattice([[0.5]], np.zeros((1, 0)))


def test_all_neg_inf_row_gives_infinite_loss():
    blank = np.log(np.full((3, 2), 0.5))
    blank[1, :] = -np.inf
    label = np.full((3, 1), -np.inf)
    lat = LogProbLattice(blank, label)
    assert full_sum_loss(lat) == math.inf
    g = loss_gradients(lat)
    assert g.no_path and g.loss == math.inf
    assert not g.blank.any() and not g.label.any()


def test_brute_force_guard():
    lat = LogProbLattice(np.zeros((30, 16)) - 1, np.zeros((30, 15)) - 1)
    with pytest.raises(PathCountError):
        brute_force_loss(lat)


def test_oracle_equivalence_random():
    rng = np.random.default_rng(0)
    for _ in range(150):
        T, U = rng.integers(1, 6), rng.integers(0, 5)
        lat = random_lattice(rng, T, U, low=1e-3, high=1.0)
        assert abs(full_sum_loss(lat) - brute_force_loss(lat)) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(T=st.integers(1, 5), U=st.integers(0, 4), seed=st.integers(0, 2**32 - 1))
def test_oracle_equivalence_property(T, U, seed):
    lat = random_lattice(np.random.default_rng(seed), T, U, low=1e-6, high=1.0)
    assert abs(full_sum_loss(lat) - brute_force_loss(lat)) <= 1e-10


def test_gradient_single_path():
    lat = LogProbLattice([[-1.0]], np.zeros((1, 0)))
    g = loss_gradients(lat)
    assert g.blank[0, 0] == -1.0


def test_gradient_one_path_lattice():
    # T=1 forces every token into frame 0: a single path through every used cell.
    lat = LogProbLattice(np.log([[0.3, 0.4, 0.5]]), np.log([[0.2, 0.7]]))
    g = loss_gradients(lat)
    np.testing.assert_allclose(g.label, [[-1.0, -1.0]], atol=1e-14)
    np.testing.assert_allclose(g.blank, [[0.0, 0.0, -1.0]], atol=1e-14)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(5):
        lat = random_lattice(rng, 4, 3)
        g = loss_gradients(lat)
        fd_blank = central_difference(lambda b: full_sum_loss(LogProbLattice(b, lat.label_lp)), lat.blank_lp)
        fd_label = central_difference(lambda l: full_sum_loss(LogProbLattice(lat.blank_lp, l)), lat.label_lp)
        assert relative_error(g.blank, fd_blank) <= 1e-4
        assert relative_error(g.label, fd_label) <= 1e-4


def test_gradient_occupancy_identity():
    # Every path takes exactly T blank arcs and U label arcs.
    rng = np.random.default_rng(3)
    lat = random_lattice(rng, 5, 3)
    g = loss_gradients(lat)
    assert g.blank.sum() == pytest.approx(-5.0, abs=1e-12)
    assert g.label.sum() == pytest.approx(-3.0, abs=1e-12)


def test_full_mask_matches_dense_exactly():
    rng = np.random.default_rng(11)
    lat = random_lattice(rng, 6, 3)
    assert restricted_full_sum_loss(lat, BandMask.full(6, 3)) == full_sum_loss(lat)


def test_mask_without_path_rejected():
    valid = np.ones((3, 2), dtype=bool)
    valid[:, 1] = False
    with pytest.raises(InvalidMaskError):
        BandMask(valid)


def test_mask_shape_mismatch():
    lat = LogProbLattice(np.zeros((2, 2)) - 1, np.zeros((2, 1)) - 1)
    with pytest.raises(InvalidInputError):
        restricted_full_sum_loss(lat, BandMask.full(3, 1))


def test_restricted_matches_masked_enumeration():
    rng = np.random.default_rng(5)
    for _ in range(40):
        T, U = rng.integers(1, 7), rng.integers(0, 4)
        lat = random_lattice(rng, T, U)
        valid = rng.random((T, U + 1)) < 0.7
        try:
            mask = BandMask(valid)
        except InvalidMaskError:
            continue
        assert restricted_full_sum_loss(lat, mask) >= full_sum_loss(lat) - 1e-12
        assert abs(restricted_full_sum_loss(lat, mask) - brute_force_loss(lat, mask)) <= 1e-10


def test_restricted_gradients_zero_outside_and_match_fd():
    rng = np.random.default_rng(9)
    lat = random_lattice(rng, 5, 3)
    valid = np.ones((5, 4), dtype=bool)
    valid[3:, 0] = False
    valid[0, 2:] = False
    mask = BandMask(valid)
    g = restricted_loss_gradients(lat, mask)
    assert not g.blank[~valid].any()
    fd = central_difference(lambda b: restricted_full_sum_loss(LogProbLattice(b, lat.label_lp), mask), lat.blank_lp)
    assert relative_error(g.blank, fd) <= 1e-4
    fd = central_difference(lambda l: restricted_full_sum_loss(LogProbLattice(lat.blank_lp, l), mask), lat.label_lp)
    assert relative_error(g.label, fd) <= 1e-4


def test_alignment_logprob_sums_to_loss():
    rng = np.random.default_rng(2)
    lat = random_lattice(rng, 3, 2)
    total = np.logaddexp.reduce([alignment_logprob(lat, a) for a in iter_alignments(3, 2)])
    assert -total == pytest.approx(full_sum_loss(lat), abs=1e-12)


def test_neg_inf_entries_do_not_produce_nan():
    rng = np.random.default_rng(4)
    lat = random_lattice(rng, 4, 2)
    blank = lat.blank_lp.copy()
    blank[1, 0] = -np.inf
    label = lat.label_lp.copy()
    label[2, 1] = -np.inf
    lat = LogProbLattice(blank, label)
    g = loss_gradients(lat)
    assert np.isfinite(g.loss)
    assert not np.isnan(g.blank).any() and not np.isnan(g.label).any()
    assert abs(full_sum_loss(lat) - brute_force_loss(lat)) <= 1e-10
