import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from mfrec.clustering import (
    ClusteringError,
    assign_to_clusters,
    clusters_csv,
    kmeans_fit,
    read_clusters_csv,
    user_latent_features,
)
from mfrec.factorization import NmfModel, SgdMfModel, svd_truncated


def col(*xs):
    return np.array(xs, dtype=float)[:, None]


class TestFeatures:
    def test_svd_scaled_by_singular_values(self):
        feats = user_latent_features(svd_truncated(np.diag([3.0, 1.0]), 2))
        np.testing.assert_allclose(feats, [[3, 0], [0, 1]], atol=1e-15)

    def test_nmf_and_sgd_rows(self):
        w = np.arange(6.0).reshape(3, 2)
        assert np.array_equal(user_latent_features(NmfModel(W=w, H=np.ones((2, 4)))), w)
        p = np.ones((5, 2))
        assert user_latent_features(SgdMfModel(P=p, Q=np.ones((2, 3)), alpha=0.01, lam=0.0, epochs=1)).shape == (5, 2)

    def test_rejects_unknown_model(self):
        with pytest.raises(TypeError):
            user_latent_features(object())


class TestKMeans:
    def test_each_point_own_cluster(self):
        cm = kmeans_fit(col(0, 10), k=2, seed=0)
        assert sorted(cm.centroids.ravel().tolist()) == [0.0, 10.0]
        assert cm.inertia == 0.0

    def test_two_pairs_match_brute_force(self):
        pts = col(1, 2, 9, 10)
        cm = kmeans_fit(pts, k=2, seed=0, restarts=5)
        assert sorted(cm.centroids.ravel().tolist()) == [1.5, 9.5]
        assert cm.inertia == pytest.approx(oracles.optimal_two_partition(pts.tolist()))
        assert cm.inertia == pytest.approx(1.0)

    def test_single_cluster(self):
        cm = kmeans_fit(col(1, 2, 3), k=1)
        assert cm.centroids.ravel().tolist() == [2.0] and cm.inertia == 2.0

    @pytest.mark.parametrize("k", [0, 4])
    def test_k_out_of_range(self, k):
        with pytest.raises(ClusteringError):
            kmeans_fit(col(1, 2, 3), k=k)

    def test_deterministic(self):
        pts = np.random.default_rng(0).normal(size=(30, 3))
        a, b = kmeans_fit(pts, k=4, seed=3), kmeans_fit(pts, k=4, seed=3)
        assert a.centroids.tobytes() == b.centroids.tobytes()
        assert np.array_equal(a.assignments, b.assignments)

    def test_duplicate_points_keep_every_cluster_populated(self):
        pts = col(0, 0, 0, 0, 5)
        cm = kmeans_fit(pts, k=3, seed=1)
        assert len(set(cm.assignments.tolist())) == 3

    def test_iteration_cap(self):
        pts = np.random.default_rng(4).normal(size=(200, 2))
        cm = kmeans_fit(pts, k=8, seed=0, max_iterations=1, restarts=1)
        assert cm.iterations == 1 and len(cm.inertia_trace) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(1, 4), st.integers(0, 2**31), st.data())
def test_kmeans_invariants(n, dim, seed, data):
    k = data.draw(st.integers(1, min(n, 6)))
    pts = np.random.default_rng(seed).normal(size=(n, dim))
    cm = kmeans_fit(pts, k=k, seed=seed, restarts=3)
    assert np.all(np.diff(cm.inertia_trace) <= 1e-9 * max(1.0, cm.inertia_trace[0]))
    assert set(cm.assignments.tolist()) == set(range(k))
    if cm.converged:
        assert np.array_equal(assign_to_clusters(cm, pts), cm.assignments)


class TestAssign:
    def test_point_on_centroid(self):
        assert assign_to_clusters(np.array([[0.0, 0.0], [7.0, 1.0]]), [[7.0, 1.0]]).tolist() == [1]

    def test_tie_goes_to_lowest_index(self):
        assert assign_to_clusters(col(0, 2), [[1.0]]).tolist() == [0]

    def test_dimension_mismatch(self):
        with pytest.raises(ClusteringError):
            assign_to_clusters(np.zeros((2, 2)), [[1.0, 2.0, 3.0]])


def test_cluster_csv_round_trip():
    cm = kmeans_fit(col(0, 1, 10, 11), k=2, seed=0)
    text = clusters_csv(cm, ["a", "b", "c", "d"])
    assert text.splitlines()[0] == "user_id,cluster"
    labels = read_clusters_csv(text, {"a": 0, "b": 1, "c": 2, "d": 3})
    assert np.array_equal(labels, cm.assignments)
    with pytest.raises(ClusteringError):
        read_clusters_csv(text, {"a": 0, "b": 1, "c": 2, "d": 3, "e": 4})
