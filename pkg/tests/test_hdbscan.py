import warnings

import numpy as np
import pytest
from scipy.spatial.distance import cdist
from sklearn.cluster import HDBSCAN
from sklearn.metrics import adjusted_rand_score

from nerfpc.errors import DegenerateInputWarning
from nerfpc.hdbscan import core_distances, hdbscan_labels, mutual_reachability, prim_mst


def reference_labels(dist, min_cluster_size, single_cluster):
    model = HDBSCAN(min_cluster_size=min_cluster_size, metric="precomputed", allow_single_cluster=single_cluster)
    return model.fit(dist.copy()).labels_


def blob_matrix(seed, n_blobs=None, n=None, rounded=False):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(30, 120))
    k = n_blobs or int(rng.integers(2, 5))
    centers = rng.normal(0, 5, (k, 3))
    pts = centers[rng.integers(0, k, n)] + rng.normal(0, 1, (n, 3))
    dist = cdist(pts, pts)
    return np.round(dist) if rounded else dist


def test_two_separated_blobs_give_two_clusters():
    rng = np.random.default_rng(0)
    pts = np.concatenate([rng.normal(0, 0.1, (20, 2)), rng.normal(10, 0.1, (20, 2))])
    dist = cdist(pts, pts)
    labels = hdbscan_labels(dist, 20, single_cluster=False)
    assert set(labels[:20]) == {labels[0]} and set(labels[20:]) == {labels[20]}
    assert labels[0] != labels[20] and -1 not in labels
    assert adjusted_rand_score(labels, reference_labels(dist, 20, False)) == 1.0


def test_identical_points_warn_and_form_one_cluster():
    with pytest.warns(DegenerateInputWarning):
        labels = hdbscan_labels(np.zeros((12, 12)), 5)
    assert np.array_equal(labels, np.zeros(12))


def test_min_cluster_size_above_point_count():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(40, 3))
    dist = cdist(pts, pts)
    single = hdbscan_labels(dist, 41, single_cluster=True)
    assert len(set(single.tolist()) - {-1}) <= 1
    # the reference refuses this size, so compare against its largest allowed size instead
    assert adjusted_rand_score(single, reference_labels(dist, 40, True)) == 1.0
    none = hdbscan_labels(dist, 41, single_cluster=False)
    assert np.all(none == -1)


@pytest.mark.parametrize("seed", range(40))
def test_matches_reference_implementation(seed):
    rng = np.random.default_rng(1000 + seed)
    dist = blob_matrix(seed, rounded=seed % 3 == 0)
    mcs = int(rng.integers(3, 15))
    single = bool(seed % 2)
    ours = hdbscan_labels(dist, mcs, single)
    ref = reference_labels(dist, mcs, single)
    assert np.array_equal(ours == -1, ref == -1)
    assert adjusted_rand_score(ours, ref) == 1.0


def test_core_distance_counts_the_point_itself():
    dist = cdist(np.arange(5.0)[:, None], np.arange(5.0)[:, None])
    assert np.array_equal(core_distances(dist, 1), np.zeros(5))
    assert np.array_equal(core_distances(dist, 2), np.ones(5))
    mr = mutual_reachability(dist, 3)
    assert np.array_equal(mr, np.maximum(dist, np.maximum.outer(core_distances(dist, 3), core_distances(dist, 3))))


def test_prim_tree_weight_is_minimal():
    from scipy.sparse.csgraph import minimum_spanning_tree

    rng = np.random.default_rng(5)
    w = rng.random((30, 30))
    w = w + w.T
    np.fill_diagonal(w, 0)
    edges = prim_mst(w)
    assert edges[:, 2].sum() == pytest.approx(minimum_spanning_tree(w).sum(), rel=1e-12)


def test_rejects_bad_matrices():
    with pytest.raises(ValueError):
        hdbscan_labels(np.zeros((0, 0)))
    with pytest.raises(ValueError):
        hdbscan_labels(np.array([[0.0, 1.0], [2.0, 0.0]]))


def test_labels_are_deterministic():
    dist = blob_matrix(11)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        first = hdbscan_labels(dist, 5, True)
        assert all(np.array_equal(first, hdbscan_labels(dist, 5, True)) for _ in range(3))
