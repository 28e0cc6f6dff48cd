
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftilm.errors import DegenerateInputError, InvalidInputError
from ftilm.lattice import (
    BandMask,
    alignment_logprob,
    brute_force_loss,
    full_sum_loss,
    iter_alignments,
    restricted_full_sum_loss,
)
from ftilm.mwer import (
    BandConfig,
    NBestItem,
    band_from_alignment,
    combined_loss,
    edit_alignment,
    mwer_gradients,
    mwer_loss,
    word_edit_distance,
)
from ftilm.oracles import central_difference, relative_error

from conftest import random_lattice


def items(scores, errors, ilm=None):
    ilm = ilm if ilm is not None else [0.0] * len(scores)
    return [NBestItem((i,), s, l, r) for i, (s, l, r) in enumerate(zip(scores, ilm, errors))]


def naive_edit_distance(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        naive_edit_distance(a[1:], b) + 1,
        naive_edit_distance(a, b[1:]) + 1,
        naive_edit_distance(a[1:], b[1:]) + (a[0] != b[0]),
    )


def test_edit_distance_examples():
    assert word_edit_distance("a b c".split(), "a b c".split()) == 0
    assert word_edit_distance("a b c".split(), []) == 3
    assert word_edit_distance("the cat sat".split(), "the cats sat down".split()) == 2


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abc"), max_size=6), st.lists(st.sampled_from("abc"), max_size=6))
def test_edit_distance_matches_recursion(a, b):
    assert word_edit_distance(a, b) == naive_edit_distance(a, b)
    ops = edit_alignment(a, b)
    assert sum(op != "match" for op, _, _ in ops) == word_edit_distance(a, b)
    assert [j for op, _, j in ops if j is not None] == list(range(len(b)))
    assert [i for op, i, _ in ops if i is not None] == list(range(len(a)))


def test_mwer_equal_errors():
    rng = np.random.default_rng(0)
    assert mwer_loss(items(rng.standard_normal(5), [3] * 5), 0.4) == pytest.approx(3.0, abs=1e-12)


def test_mwer_uniform_two():
    assert mwer_loss(items([-1.0, -1.0], [0, 2]), 0.0) == pytest.approx(1.0, abs=1e-15)


def test_mwer_three_hypotheses():
    # 50-digit evaluation of sum(softmax(-1, -2, -3) * (0, 1, 2)).
    assert mwer_loss(items([-1.0, -2.0, -3.0], [0, 1, 2]), 0.0) == pytest.approx(0.42478961739555857, abs=1e-14)


def test_mwer_beta_uses_ilm_sum():
    a = mwer_loss(items([-1.0, -2.0], [0, 1], ilm=[-4.0, -1.0]), 0.5)
    b = mwer_loss(items([-3.0, -2.5], [0, 1]), 0.0)
    assert a == pytest.approx(b, abs=1e-15)


def test_mwer_degenerate():
    with pytest.raises(DegenerateInputError):
        mwer_loss(items([-np.inf, -np.inf], [0, 1]), 0.0)
    with pytest.raises(InvalidInputError):
        mwer_loss([], 0.0)


def test_mwer_random_properties():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = rng.integers(1, 8)
        scores = 5 * rng.standard_normal(n)
        ilm = 5 * rng.standard_normal(n)
        errors = rng.integers(0, 6, size=n)
        beta = rng.uniform(0, 1)
        nb = items(scores, errors, ilm)
        loss = mwer_loss(nb, beta)
        assert errors.min() - 1e-12 <= loss <= errors.max() + 1e-12
        shift = rng.uniform(-50, 50)
        assert mwer_loss(items(scores + shift, errors, ilm), beta) == pytest.approx(loss, abs=1e-9)
        assert abs(mwer_gradients(nb, beta).sum()) <= 1e-12


def test_mwer_gradients():
    assert not mwer_gradients(items([-1.0, -3.0, 0.5], [2, 2, 2]), 0.3).any()
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = rng.integers(2, 7)
        scores, ilm, errors = rng.standard_normal(n), rng.standard_normal(n), rng.integers(0, 5, size=n)
        g = mwer_gradients(items(scores, errors, ilm), 0.6)
        fd = central_difference(lambda s: mwer_loss(items(s, errors, ilm), 0.6), scores)
        assert relative_error(g, fd, floor=1e-6) <= 1e-6


def test_one_step_descent():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = rng.integers(2, 6)
        scores, errors = rng.standard_normal(n), rng.integers(0, 4, size=n)
        g = mwer_gradients(items(scores, errors), 0.0)
        if np.abs(g).max() < 1e-12:
            continue
        assert mwer_loss(items(scores - 0.1 * g, errors), 0.0) < mwer_loss(items(scores, errors), 0.0)


def test_combined_loss():
    assert combined_loss(2.5, 7.0, 0.0) == 2.5
    assert combined_loss(0.0, 7.0, 1.0) == 7.0
    assert combined_loss(1.0, 2.0) == pytest.approx(1.2)
    with pytest.raises(InvalidInputError):
        combined_loss(1.0, 1.0, -0.1)


def emission_window_oracle(lattice, alignment, C):
    """Sum over alignments whose every token lies within its tolerance window."""
    T, U = lattice.shape
    scores = [
        alignment_logprob(lattice, frames)
        for frames in iter_alignments(T, U)
        if all(a - C.left_context <= e <= a + C.right_context for e, a in zip(frames, alignment))
    ]
    return -float(np.logaddexp.reduce(scores))


def random_alignment(rng, T, U):
    return tuple(sorted(int(x) for x in rng.integers(0, T, size=U)))


def test_band_full_width_is_dense():
    rng = np.random.default_rng(4)
    lat = random_lattice(rng, 7, 3)
    mask = band_from_alignment(random_alignment(rng, 7, 3), BandConfig(7, 7), 7, 3)
    assert mask == BandMask.full(7, 3)
    assert restricted_full_sum_loss(lat, mask) == full_sum_loss(lat)


def test_band_zero_width_is_single_path():
    rng = np.random.default_rng(5)
    for _ in range(20):
        T, U = rng.integers(1, 9), rng.integers(0, 4)
        lat = random_lattice(rng, T, U)
        a = random_alignment(rng, T, U)
        mask = band_from_alignment(a, BandConfig(0, 0), T, U)
        assert mask.num_paths() == 1
        assert restricted_full_sum_loss(lat, mask) == pytest.approx(-alignment_logprob(lat, a), abs=1e-12)


def test_band_matches_masked_enumeration():
    rng = np.random.default_rng(6)
    for _ in range(30):
        T, U = 8, 3
        lat = random_lattice(rng, T, U)
        a = random_alignment(rng, T, U)
        C = BandConfig(2, 2)
        mask = band_from_alignment(a, C, T, U)
        got = restricted_full_sum_loss(lat, mask)
        assert abs(got - brute_force_loss(lat, mask)) <= 1e-10
        assert abs(got - emission_window_oracle(lat, a, C)) <= 1e-10


def test_band_monotone_in_width():
    rng = np.random.default_rng(7)
    for _ in range(10):
        T, U = 8, 3
        lat = random_lattice(rng, T, U)
        a = random_alignment(rng, T, U)
        losses = [restricted_full_sum_loss(lat, band_from_alignment(a, BandConfig(c, c), T, U)) for c in range(9)]
        assert all(x >= y - 1e-12 for x, y in zip(losses, losses[1:]))
        assert losses[-1] == full_sum_loss(lat)


def test_band_asymmetric_contexts():
    rng = np.random.default_rng(8)
    lat = random_lattice(rng, 8, 3)
    a = (1, 4, 4)
    C = BandConfig(left_context=1, right_context=3)
    mask = band_from_alignment(a, C, 8, 3)
    assert abs(restricted_full_sum_loss(lat, mask) - emission_window_oracle(lat, a, C)) <= 1e-10


def test_band_contains_own_alignment():
    rng = np.random.default_rng(9)
    for _ in range(50):
        T, U = rng.integers(1, 12), rng.integers(0, 6)
        a = random_alignment(rng, T, U)
        for c in (0, 1, 3):
            assert band_from_alignment(a, BandConfig(c, c), T, U).contains_alignment(a)


def test_band_path_count_reduction():
    full = BandMask.full(30, 5).num_paths()
    narrow = band_from_alignment((3, 8, 14, 20, 26), BandConfig(2, 2), 30, 5).num_paths()
    assert narrow < full


@pytest.mark.parametrize("alignment", [(3, 1), (0, 5), (-1, 2), (1,)])
def test_band_invalid_alignment(alignment):
    with pytest.raises(InvalidInputError):
        band_from_alignment(alignment, BandConfig(1, 1), 5, 2)


def test_band_config_non_negative():
    with pytest.raises(InvalidInputError):
        BandConfig(-1, 0)
