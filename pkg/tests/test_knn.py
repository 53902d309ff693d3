from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artpop.errors import DimensionMismatch, TooFewDonors
from artpop.knn import brute_force_knn, build_index, query_knn


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 60), st.integers(1, 4), st.integers(1, 10), st.integers(0, 2**32 - 1),
       st.booleans())
def test_matches_brute_force(n, dim, k, seed, grid):
    k = min(k, n)
    rng = np.random.default_rng(seed)
    # integer grids force many exact distance ties
    pts = rng.integers(0, 3, size=(n, dim)).astype(float) if grid else rng.normal(size=(n, dim))
    ids = rng.permutation(10 * n)[:n]
    q = rng.integers(0, 3, size=(7, dim)).astype(float) if grid else rng.normal(size=(7, dim))
    got = query_knn(build_index(pts, ids), q, k)
    ref = brute_force_knn(pts, ids, q, k)
    np.testing.assert_array_equal(got.donor_ids, ref.donor_ids)
    np.testing.assert_allclose(got.distances, ref.distances, rtol=1e-12, atol=0)


def test_ties_ranked_by_ascending_id():
    pts = np.zeros((4, 2))
    nl = query_knn(build_index(pts, [40, 10, 30, 20]), [1.0, 0.0], 4)
    assert nl.donor_ids[0].tolist() == [10, 20, 30, 40]
    assert nl.ranked()[0] == (10, 1.0)


def test_distances_non_decreasing(rng):
    idx = build_index(rng.normal(size=(500, 8)), np.arange(500))
    nl = query_knn(idx, rng.normal(size=(100, 8)), 10)
    assert np.all(np.diff(nl.distances, axis=1) >= 0)


def test_worker_count_does_not_change_output(rng):
    idx = build_index(rng.normal(size=(300, 3)), np.arange(300))
    q = rng.normal(size=(5000, 3))
    a = query_knn(idx, q, 5, workers=1, chunk=512)
    b = query_knn(idx, q, 5, workers=4, chunk=512)
    np.testing.assert_array_equal(a.donor_ids, b.donor_ids)
    np.testing.assert_array_equal(a.distances, b.distances)


def test_errors():
    idx = build_index(np.zeros((3, 2)), [1, 2, 3], stratum="s")
    with pytest.raises(DimensionMismatch):
        query_knn(idx, np.zeros(3), 1)
    with pytest.raises(TooFewDonors) as err:
        query_knn(idx, np.zeros(2), 4)
    assert "s" in str(err.value)
    with pytest.raises(TooFewDonors):
        build_index(np.zeros((3, 2)), [1, 2, 3], k=5)
    with pytest.raises(ValueError):
        build_index(np.zeros((2, 2)), [1, 1])
    with pytest.raises(ValueError):
        build_index(np.array([[np.nan, 0.0]]), [1])
