import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from nerfpc.assets_io import PointCloud
from nerfpc.errors import ConfigError, EmptyCloud
from nerfpc.metrics import chamfer, evaluate, fscore, hausdorff, nearest_distances


def brute_nearest(a, b):
    """O(n*m) nearest-neighbor distances with the plain Euclidean formula."""
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1)).min(axis=1)


def brute_metrics(a, b, threshold):
    ab, ba = brute_nearest(a, b), brute_nearest(b, a)
    p, r = np.mean(ab <= threshold), np.mean(ba <= threshold)
    f = 0.0 if p + r == 0 else 200.0 * p * r / (p + r)
    return 0.5 * (ab.mean() + ba.mean()), max(ab.max(), ba.max()), f


def grid(pitch=1.0, n=10):
    xs = np.arange(n) * pitch
    return np.stack(np.meshgrid(xs, xs, indexing="ij"), -1).reshape(-1, 2) @ np.array([[1.0, 0, 0], [0, 1.0, 0]])


def test_nearest_examples():
    a = np.random.default_rng(0).random((20, 3))
    assert np.array_equal(nearest_distances(a, a), np.zeros(20))
    assert nearest_distances([[0, 0, 0]], [[0, 2.0, 0]]).tolist() == [2.0]


def test_matches_brute_force_exactly():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.random((1000, 3)), rng.random((1000, 3))
        assert np.array_equal(nearest_distances(a, b), brute_nearest(a, b))
        c, h, f = brute_metrics(b, a, 0.05)
        m = evaluate(a, b, 0.05)
        assert (m.chamfer, m.hausdorff, m.fscore) == (c, h, f)


def test_shifted_grid():
    a = grid()
    b = a + [0.1, 0.0, 0.0]
    assert chamfer(a, b) == pytest.approx(0.1, abs=1e-9)
    assert hausdorff(a, b) == pytest.approx(0.1, abs=1e-9)


def test_outlier_and_fscore_examples():
    a = grid()
    assert chamfer(a, a) == 0.0 and hausdorff(a, a) == 0.0 and fscore(a, a, 0.01) == 100.0
    b = np.vstack([a, [[4.0, 4.0, 5.0]]])
    assert hausdorff(a, b) == 5.0
    far = a + [0.0, 0.0, 10.0]
    assert fscore(a, far, 0.5) == 0.0
    # half of the test cloud near the reference, all of the reference near the test cloud
    ref = np.array([[0.0, 0, 0]])
    test = np.array([[0.0, 0, 0.01], [0.0, 0, 3.0]])
    m = evaluate(ref, test, 0.05)
    assert m.fscore == pytest.approx(66.667, abs=1e-3)


def test_errors_and_cloud_inputs():
    with pytest.raises(EmptyCloud):
        chamfer(np.zeros((0, 3)), np.zeros((3, 3)))
    with pytest.raises(ConfigError):
        evaluate(np.zeros((1, 3)), np.zeros((1, 3)), 0.0)
    cloud = PointCloud(np.eye(3), np.zeros((3, 3)))
    assert evaluate(cloud, cloud, 0.1).to_dict() == {"chamfer": 0.0, "hausdorff": 0.0, "fscore": 100.0, "threshold": 0.1}


clouds = arrays(np.float64, st.tuples(st.integers(1, 60), st.just(3)), elements=st.floats(-10, 10))


@settings(max_examples=100, deadline=None)
@given(clouds, clouds, st.floats(0.01, 5.0))
def test_symmetry_and_ordering(a, b, threshold):
    assert chamfer(a, b) == chamfer(b, a)
    assert hausdorff(a, b) == hausdorff(b, a)
    assert fscore(a, b, threshold) == pytest.approx(fscore(b, a, threshold), abs=1e-12)
    assert chamfer(a, b) <= hausdorff(a, b)


@settings(max_examples=100, deadline=None)
@given(clouds, clouds, st.tuples(*[st.floats(-np.pi, np.pi)] * 3), st.tuples(*[st.floats(-50, 50)] * 3))
def test_rigid_invariance(a, b, angles, shift):
    q = Rotation.from_euler("xyz", angles).as_matrix()
    move = lambda x: x @ q.T + np.array(shift)  # noqa: E731
    assert chamfer(move(a), move(b)) == pytest.approx(chamfer(a, b), abs=1e-9)
    assert hausdorff(move(a), move(b)) == pytest.approx(hausdorff(a, b), abs=1e-9)


def test_fscore_rigid_invariance_away_from_threshold():
    rng = np.random.default_rng(3)
    a = rng.random((500, 3))
    b = a + rng.normal(scale=0.02, size=a.shape)
    q = Rotation.from_euler("xyz", [0.3, -1.2, 2.0]).as_matrix()
    assert fscore(a @ q.T + 7, b @ q.T + 7, 0.037) == fscore(a, b, 0.037)
