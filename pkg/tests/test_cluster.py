import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

import oracles
from polydiff import cluster


def test_four_points_two_clusters():
    X = np.array([[0.0], [1.0], [9.0], [10.0]])
    m = cluster.kmeans_fit(X, 2, seed=13)
    assert sorted(m.centroids.ravel().tolist()) == [0.5, 9.5]
    assert m.wcss == 1.0
    w, cents = oracles.best_two_partition([0, 1, 9, 10])
    assert (m.wcss, sorted(m.centroids.ravel())) == (w, cents)


@pytest.mark.parametrize("seed", range(10))
def test_wcss_non_increasing(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((200, 3)) + rng.integers(0, 4, (200, 1)) * 3
    m = cluster.kmeans_fit(X, 5, seed=seed)
    h = np.array(m.wcss_history)
    assert np.all(np.diff(h) <= 1e-9 * h[0])


@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=4, max_size=9, unique=True))
def test_small_1d_matches_exhaustive(points):
    # Lloyd only guarantees a local optimum; the exhaustive split bounds it from below
    X = np.array(points)[:, None]
    m = cluster.kmeans_fit(X, 2, seed=1)
    best, _ = oracles.best_two_partition(points)
    assert m.wcss >= best - 1e-9


def test_labels_are_nearest_centroid(rng):
    X = rng.standard_normal((150, 4))
    m = cluster.kmeans_fit(X, 6, seed=3)
    C = m.centroids.tolist()
    for x, lab in zip(X.tolist(), m.labels):
        assert lab == oracles.nearest_centroid(x, C)
    assert cluster.assign(m, X[17]) == m.labels[17]


def test_sparse_and_dense_agree(rng):
    X = rng.poisson(0.4, (120, 30)).astype(float)
    a = cluster.kmeans_fit(X, 4, seed=5)
    b = cluster.kmeans_fit(sp.csr_matrix(X), 4, seed=5)
    assert np.array_equal(a.labels, b.labels)
    assert np.allclose(a.centroids, b.centroids)


def test_worker_count_independent(rng):
    X = sp.csr_matrix(rng.poisson(0.3, (5000, 40)).astype(float))
    a = cluster.kmeans_fit(X, 8, seed=2, workers=1)
    b = cluster.kmeans_fit(X, 8, seed=2, workers=4)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.centroids, b.centroids)


def test_too_few_distinct_points():
    X = np.array([[1.0], [1.0], [1.0], [2.0]])
    with pytest.raises(cluster.FitError):
        cluster.kmeans_fit(X, 3)


def test_assign_dim_mismatch(rng):
    m = cluster.kmeans_fit(rng.standard_normal((20, 3)), 2)
    with pytest.raises(ValueError):
        cluster.assign(m, np.zeros(4))


def test_normalize_rows():
    X = np.array([[3.0, 4.0], [0.0, 0.0]])
    assert np.allclose(cluster.normalize_rows(X), [[0.6, 0.8], [0.0, 0.0]])
    S = cluster.normalize_rows(sp.csr_matrix(X))
    assert np.allclose(S.toarray(), [[0.6, 0.8], [0.0, 0.0]])


def _blobs(rng):
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    return np.vstack([c + rng.standard_normal((100, 2)) * 0.5 for c in centers])


def test_elbow_on_three_blobs(rng):
    rows = cluster.elbow_scan(_blobs(rng), [1, 2, 3, 4], seed=13)
    w = {r.k: r.wcss for r in rows}
    assert (w[2] - w[3]) >= 5 * (w[3] - w[4])


def test_elbow_records_failures():
    X = np.array([[0.0], [1.0], [2.0]])
    rows = cluster.elbow_scan(X, [5, 2])
    assert [r.k for r in rows] == [2, 5]
    assert rows[0].error is None
    assert rows[1].error is not None and np.isnan(rows[1].wcss)


def test_pair_reduction():
    total = math.comb(212768, 2)
    assert total == 22635004528
    assert cluster.estimate_pair_reduction(212768, 1) == (total, total)
    assert cluster.estimate_pair_reduction(212768, 150)[1] == 150697950
    assert cluster.estimate_pair_reduction(10, 3) == (45, 9)
    with pytest.raises(ValueError):
        cluster.estimate_pair_reduction(1, 1)


def test_model_file_round_trip(tmp_path, rng):
    m = cluster.kmeans_fit(rng.standard_normal((30, 5)), 3)
    cluster.save_model(tmp_path / "m.bin", m)
    loaded = cluster.load_model(tmp_path / "m.bin")
    assert np.array_equal(loaded.centroids, m.centroids)
    assert cluster.assign(loaded, m.centroids[1]) == 1


@given(st.integers(2, 10**6), st.integers(1, 500))
def test_pair_reduction_bounded(n, k):
    if k > n:
        return
    total, blocked = cluster.estimate_pair_reduction(n, k)
    assert total == math.comb(n, 2)
    assert blocked == k * math.comb(n // k, 2)
    assert blocked <= total


def test_distinct_points_equal_k():
    m = cluster.kmeans_fit(np.array([[0.0], [10.0]]), 2)
    assert sorted(m.centroids.ravel().tolist()) == [0.0, 10.0]
    assert m.wcss == 0.0


def test_single_cluster_closed_form(rng):
    X = rng.standard_normal((50, 3))
    m = cluster.kmeans_fit(X, 1)
    assert np.allclose(m.centroids[0], X.mean(axis=0))
    assert m.wcss == pytest.approx(X.var(axis=0).sum() * len(X), rel=1e-12)
    rows = cluster.elbow_scan(X, [1])
    assert len(rows) == 1 and rows[0].wcss == pytest.approx(m.wcss, rel=1e-12)


def test_assign_examples():
    C = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [2.0, 2.0], [3.0, 0.0]])
    m = cluster.KMeansModel(5, C, 0.0, 0)
    assert cluster.assign(m, C[3]) == 3
    # (2, 0) is at distance 1 from centroids 1 and 4
    assert cluster.assign(m, np.array([2.0, 0.0])) == 1


def test_elbow_k_equals_n():
    X = np.array([[0.0], [3.0], [7.0]])
    assert cluster.elbow_scan(X, [3])[0].wcss == 0.0


def test_pair_reduction_singletons():
    assert cluster.estimate_pair_reduction(50, 50)[1] == 0
