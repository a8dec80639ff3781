import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lqgkpz.rng import BLOCK_ROWS, stream, white_noise


def test_streams_are_philox_and_reproducible():
    g = stream(1, "a", 0)
    assert isinstance(g.bit_generator, np.random.Philox)
    assert np.array_equal(g.standard_normal(5), stream(1, "a", 0).standard_normal(5))


def test_names_indices_and_seeds_separate_streams():
    base = stream(1, "a", 0).random(4)
    for other in (stream(1, "b", 0), stream(1, "a", 1), stream(2, "a", 0)):
        assert not np.array_equal(base, other.random(4))


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        stream(-1, "a")


@settings(max_examples=25, deadline=None)
@given(rows=st.integers(1, 3 * BLOCK_ROWS), cols=st.integers(1, 5), seed=st.integers(0, 10**6))
def test_white_noise_blocks_are_independent_of_total_size(rows, cols, seed):
    big = white_noise((rows + BLOCK_ROWS, cols), seed, "n")
    small = white_noise((rows, cols), seed, "n")
    full_blocks = (rows // BLOCK_ROWS) * BLOCK_ROWS
    assert np.array_equal(big[:full_blocks], small[:full_blocks])
    assert small.shape == (rows, cols)
