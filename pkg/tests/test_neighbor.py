import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eventgraph.neighbor import knn, split_adjacent_distant
from oracles import knn_bruteforce


def test_collinear_example():
    rows = knn(np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]]), 2)
    assert rows[0].tolist() == [0, 1]
    assert rows[2].tolist() == [2, 1]


def test_k1_is_self():
    pts = np.random.default_rng(0).integers(0, 5, size=(20, 3))
    assert knn(pts, 1)[:, 0].tolist() == list(range(20))


def test_too_few_vertices():
    with pytest.raises(ValueError):
        knn(np.zeros((3, 3)), 4)


def test_random_cloud_matches_oracle():
    pts = np.random.default_rng(1).integers(0, 10, size=(50, 3))
    assert np.array_equal(knn(pts, 10), knn_bruteforce(pts, 10))


@st.composite
def clouds(draw, max_n=256):
    n = draw(st.integers(1, max_n))
    extent = draw(st.sampled_from([2, 4, 16, 64]))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    pts = rng.integers(0, extent, size=(n, 3))
    k = draw(st.integers(1, n))
    return pts, k


@given(clouds(max_n=80))
def test_matches_bruteforce(case):
    pts, k = case
    assert np.array_equal(knn(pts, k), knn_bruteforce(pts, k))


@given(clouds(max_n=120), st.sampled_from([1, 7, 1024]))
def test_block_size_does_not_matter(case, block):
    pts, k = case
    assert np.array_equal(knn(pts, k, block=block), knn(pts, k))


@given(clouds())
def test_row_structure(case):
    pts, k = case
    rows = knn(pts, k)
    assert rows[:, 0].tolist() == list(range(len(pts)))
    d = np.linalg.norm(pts[rows] - pts[:, None, :], axis=2)
    assert np.all(np.diff(d[:, 1:], axis=1) >= 0)
    assert np.all(d[:, 0] == 0)


@given(st.integers(2, 60), st.integers(0, 2**32 - 1))
def test_permutation_consistency(n, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))  # continuous: no exact distance ties
    k = int(rng.integers(1, n + 1))
    perm = rng.permutation(n)
    rows = knn(pts, k)
    permuted = knn(pts[perm], k)
    # vertex perm[i] of the original is vertex i of the permuted cloud
    assert np.array_equal(perm[permuted], rows[perm])


def test_split_example():
    rows = np.arange(25)[None, :].repeat(3, axis=0)
    table = split_adjacent_distant(rows, 10, 15)
    assert table.adjacent[0].tolist() == list(range(10))
    assert table.distant[0].tolist() == list(range(10, 25))
    assert np.array_equal(table.rows(), rows)


def test_split_no_distant():
    table = split_adjacent_distant(np.zeros((4, 3), dtype=int), 3, 0)
    assert table.distant.shape == (4, 0) and table.n_dis == 0


def test_split_length_mismatch():
    with pytest.raises(ValueError):
        split_adjacent_distant(np.zeros((4, 5), dtype=int), 3, 3)
