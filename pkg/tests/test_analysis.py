import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from dynlink.analysis import (KMeansResult, _init_centroids, cluster_report, emit_plots, emit_scatter,
                              emit_trajectories, kmeans_cluster, lloyd, pca_project)
from dynlink.corpus import CorpusStats
from dynlink.evaluation import calibration_table, confidence_filter_curve, roc_auc, Trajectory


def _planar(seed, n=200, dim=12):
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(dim, 2)))
    coords = rng.normal(size=(n, 2)) * [4.0, 1.5]
    return coords @ basis.T + rng.normal(size=dim)


def test_planar_reconstruction_exact():
    for seed in range(5):
        X = _planar(seed)
        p = pca_project(X)
        recon = p.mean + p.points @ p.axes
        assert np.max(np.abs(recon - X)) < 1e-8


def test_axis_recovery_within_one_degree():
    rng = np.random.default_rng(0)
    theta = np.deg2rad(30.0)
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    X = (rng.normal(size=(5000, 2)) * [5.0, 1.0]) @ R.T
    axis = pca_project(X).axes[0]
    angle = np.degrees(np.arccos(min(1.0, abs(axis @ R[:, 0]))))
    assert angle < 1.0


def test_projection_properties():
    X = np.random.default_rng(1).normal(size=(300, 8)) * np.arange(1, 9)
    p = pca_project(X)
    cov = np.cov(p.points.T)
    assert abs(cov[0, 1]) < 1e-6 * cov[0, 0]
    assert p.explained_variance[0] >= p.explained_variance[1] >= 0
    for axis in p.axes:
        assert axis[np.argmax(np.abs(axis))] > 0
    assert p.axes @ p.axes.T == pytest.approx(np.eye(2), abs=1e-8)


def test_zero_variance_rejected():
    with pytest.raises(ValueError):
        pca_project(np.ones((5, 3)))


def test_k_equals_one():
    X = np.random.default_rng(2).normal(size=(50, 3))
    res = kmeans_cluster(X, k=1, restarts=2)
    assert res.centroids[0] == pytest.approx(X.mean(axis=0))
    assert res.wcss == pytest.approx(np.sum((X - X.mean(axis=0)) ** 2))
    assert res.wcss == pytest.approx(X.var(axis=0).sum() * len(X))


def _blobs(seed, per=40):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 0, 0], [20, 0, 0], [0, 20, 5]], dtype=float)
    X = np.vstack([c + rng.normal(size=(per, 3)) for c in centers])
    return X, np.repeat(np.arange(3), per)


def test_blob_recovery():
    for seed in range(5):
        X, truth = _blobs(seed)
        res = kmeans_cluster(X, k=3, seed=seed)
        assert adjusted_rand_score(truth, res.labels) == 1.0


def test_wcss_never_increases():
    rng = np.random.default_rng(3)
    for seed in range(20):
        X = rng.normal(size=(150, 4))
        res = lloyd(X, _init_centroids(X, 6, np.random.default_rng(seed)))
        h = np.array(res.history)
        assert np.all(h[1:] <= h[:-1] * (1 + 1e-12))


def test_partition_and_bad_k():
    X, _ = _blobs(0)
    res = kmeans_cluster(X, k=4)
    assert res.labels.shape == (len(X),) and set(res.labels) <= set(range(4))
    with pytest.raises(ValueError):
        kmeans_cluster(np.array([[0.0], [0.0], [1.0]]), k=3)


def test_rank_sum_hand_example():
    X = np.array([[1.0, 0], [0, 2.0], [-3.0, 0], [0, -4.0]])
    res = KMeansResult(np.zeros(4, dtype=int), np.zeros((1, 2)), 0.0)
    ids = [10, 11, 12, 13]
    freq = {10: 1, 11: 50, 12: 40, 13: 100}
    # proximity ranks 1,2,3,4; frequency ranks 4,2,3,1; sums 5,4,6,5
    assert cluster_report(X, res, ids, freq, m=3).top == {0: [11, 10, 13]}


def test_singleton_cluster_is_its_own_top():
    res = KMeansResult(np.array([0, 1, 1]), np.array([[0.0], [5.0]]), 0.0)
    rep = cluster_report(np.array([[0.0], [4.0], [6.0]]), res, [7, 8, 9], {}, m=3)
    assert rep.top[0] == [7]
    assert len(rep.top[1]) == 2


def _artifacts():
    X = _planar(0, n=30)
    proj = pca_project(X)
    clusters = kmeans_cluster(proj.points, k=3)
    s = np.linspace(0.05, 0.95, 20)
    y = (np.arange(20) % 3 == 0).astype(int)
    return {
        "projection": proj, "clusters": clusters, "concept_ids": np.arange(30),
        "report": cluster_report(proj.points, clusters, np.arange(30), {}),
        "roc": {"word-dynamic": roc_auc(s, y)}, "calibration": calibration_table(s, y),
        "confidence": confidence_filter_curve(s, y),
        "trajectories": [Trajectory((1, 2), [2000, 2001], [0.2, 0.6], 2001)],
        "stats": CorpusStats({2000: 3, 2001: 5}, {2000: 30, 2001: 50}),
    }


def test_emit_is_deterministic(tmp_path):
    a = emit_plots(_artifacts(), tmp_path / "a")
    b = emit_plots(_artifacts(), tmp_path / "b")
    assert [p.name for p in a] == [p.name for p in b]
    assert len(a) == 13
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    assert all(p.read_text().startswith("<svg") for p in a if p.suffix == ".svg")


def test_scatter_rows(tmp_path):
    art = _artifacts()
    csv_path, _ = emit_scatter(art["projection"], art["clusters"], art["concept_ids"], tmp_path)
    assert len(csv_path.read_text().splitlines()) == 1 + 30


def test_empty_trajectories_header_only(tmp_path):
    csv_path, svg_path = emit_trajectories([], tmp_path)
    assert csv_path.read_text() == "c1,c2,label,year,probability,first_cooc_year\n"
    assert svg_path.exists()


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_plots({}, blocker / "sub")
