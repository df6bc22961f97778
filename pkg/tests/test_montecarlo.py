import numpy as np
from hypothesis import given, strategies as st

from rsvolterra.montecarlo import chunked, parallel_map, substream_rng, substream_seed


def square(x):
    return x * x


@given(st.integers(0, 2**63), st.integers(0, 2**20), st.integers(1, 2**20))
def test_substreams_distinct(master, i, d):
    assert substream_seed(master, i) != substream_seed(master, i + d)


def test_substream_is_pure():
    assert substream_seed(1, 5) == substream_seed(1, 5)
    a, b = substream_rng(1, 5).random(4), substream_rng(1, 5).random(4)
    assert np.array_equal(a, b)


def test_masters_differ():
    assert substream_seed(1, 0) != substream_seed(2, 0)


def test_chunk_layout():
    assert chunked(list(range(7)), 3) == [[0, 1, 2], [3, 4, 5], [6]]


def test_parallel_map_preserves_order():
    tasks = list(range(20))
    assert parallel_map(square, tasks, workers=2) == parallel_map(square, tasks, workers=1)


def test_no_collisions_first_million():
    seeds = {substream_seed(7, i) for i in range(1_000_000)}
    assert len(seeds) == 1_000_000


def test_substreams_uncorrelated():
    x = np.array([substream_rng(3, i).random(2000) for i in range(50)])
    c = np.corrcoef(x)
    off = c[~np.eye(50, dtype=bool)]
    # sd of a null correlation at n = 2000 is about 0.022
    assert np.max(np.abs(off)) < 0.12
