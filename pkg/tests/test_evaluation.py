import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynlink.concepts import TokenizedDoc
from dynlink.evaluation import (auc_score, calibration_table, confidence_filter_curve, first_cooccurrence_year,
                                prediction_trajectory, roc_auc, write_calibration_csv, write_confidence_csv,
                                write_roc_csv, write_trajectories_csv)
from dynlink.mlp import FitConfig, MlpModel, fit
from dynlink.sgns import EmbeddingTimeline
from oracles import pairwise_auc


def test_hand_example():
    assert auc_score([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75, abs=1e-15)
    assert pairwise_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_perfect_separation():
    assert auc_score([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


def test_single_class_rejected():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])


def test_curve_endpoints():
    c = roc_auc([0.3, 0.3, 0.9, 0.1], [1, 0, 1, 0])
    assert (c.fpr[0], c.tpr[0], c.fpr[-1], c.tpr[-1]) == (0, 0, 1, 1)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)


def test_matches_pairwise_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 300))
        scores = rng.integers(0, 6, n) / 5.0
        labels = rng.random(n) < 0.4
        labels[0], labels[1] = True, False
        assert abs(auc_score(scores, labels) - pairwise_auc(scores, labels)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-1000, 1000), st.booleans()), min_size=2, max_size=60))
def test_monotone_transform_invariance(rows):
    # Integer scores keep the transforms strictly increasing in floating point too.
    scores = np.array([r[0] for r in rows], dtype=float)
    labels = np.array([r[1] for r in rows])
    if labels.all() or not labels.any():
        return
    a = auc_score(scores, labels)
    assert auc_score(np.exp(scores / 200.0), labels) == a
    assert auc_score(3 * scores + 1, labels) == a
    assert auc_score(scores ** 3, labels) == a


def test_calibration_all_half():
    t = calibration_table(np.full(10, 0.5), [1, 0] * 5)
    assert t.counts.tolist() == [0] * 5 + [10] + [0] * 4
    assert t.pos_rate[5] == 0.5
    assert np.isnan(t.pos_rate[0])


def test_calibration_recount_oracle():
    rng = np.random.default_rng(3)
    s = rng.random(100)
    s[:3] = [0.0, 1.0, 0.1]
    y = (rng.random(100) < s).astype(int)
    t = calibration_table(s, y, bins=10)
    for i in range(10):
        lo, hi = i / 10, (i + 1) / 10
        members = [j for j in range(100) if lo <= s[j] < hi or (i == 9 and s[j] == 1.0)]
        assert t.counts[i] == len(members)
        if members:
            assert t.pos_rate[i] == pytest.approx(np.mean(y[members]))


def test_calibration_conservation():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(1, 400))
        s = rng.random(n)
        y = rng.integers(0, 2, n)
        t = calibration_table(s, y, bins=int(rng.integers(2, 20)))
        assert t.counts.sum() == n
        occupied = t.counts > 0
        assert round(float(np.sum(t.counts[occupied] * t.pos_rate[occupied]))) == y.sum()


def test_calibration_bins_validated():
    with pytest.raises(ValueError):
        calibration_table([0.5], [1], bins=1)


def test_confidence_f0_is_plain_auc():
    rng = np.random.default_rng(5)
    s = rng.random(80)
    y = rng.random(80) < s
    assert confidence_filter_curve(s, y, [0.0]).auc[0] == auc_score(s, y)


def test_confidence_sort_oracle():
    rng = np.random.default_rng(6)
    s = np.round(rng.random(20), 1)
    y = rng.random(20) < s
    y[:2] = [True, False]
    curve = confidence_filter_curve(s, y, [0.5])
    ranked = sorted(range(20), key=lambda i: (abs(s[i] - 0.5), i))
    keep = sorted(ranked[10:])
    assert curve.retained[0] == 10
    if y[keep].all() or not y[keep].any():
        assert math.isnan(curve.auc[0])
    else:
        assert curve.auc[0] == pytest.approx(pairwise_auc(s[keep], y[keep]), abs=1e-12)


def test_confidence_single_class_remainder_is_nan():
    curve = confidence_filter_curve([0.5, 0.9, 0.95], [0, 1, 1], [0.0, 0.34])
    assert curve.auc[0] == 1.0 and math.isnan(curve.auc[1])


def _timeline(vecs, years):
    vecs = np.asarray(vecs, dtype=np.float32)
    return EmbeddingTimeline(list(years), [0, 1], vecs, {}, np.zeros(vecs.shape[:2], bool))


def test_constant_trajectory():
    m = MlpModel(4, hidden=(3,), seed=0)
    v = np.random.default_rng(0).normal(size=(2, 2))
    tl = _timeline(np.repeat(v[None], 4, axis=0), range(2000, 2004))
    tr = prediction_trajectory(m, tl, (0, 1), range(2000, 2004))
    assert len(set(tr.probs)) == 1
    with pytest.raises(KeyError):
        prediction_trajectory(m, tl, (0, 9), [2000])


def test_converging_pair_rises():
    finals = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        pos_mu, neg_mu = np.array([1.0, 1.0, 1.0, 1.0]), np.array([-1.0, 1.0, -1.0, 1.0])
        X = np.vstack([pos_mu + 0.3 * rng.normal(size=(100, 4)), neg_mu + 0.3 * rng.normal(size=(100, 4))])
        y = np.r_[np.ones(100), np.zeros(100)]
        m = MlpModel(4, hidden=(8,), dropout=0.0, seed=seed)
        fit(m, (X, y), (X[::5], y[::5]), FitConfig(hidden=(8,), dropout=0.0, max_epochs=50, seed=seed))
        steps = np.linspace(0, 1, 6)
        vecs = [[(1 - t) * neg_mu[:2] + t * pos_mu[:2], (1 - t) * neg_mu[2:] + t * pos_mu[2:]] for t in steps]
        tr = prediction_trajectory(m, _timeline(vecs, range(2000, 2006)), (0, 1), range(2000, 2006))
        finals.append(tr.probs)
    med = np.median(finals, axis=0)
    assert np.all(np.diff(med) >= 0)
    assert med[-1] > 0.5 > med[0]


def test_first_cooccurrence():
    docs = [TokenizedDoc([], [(0, 1), (1, 2)], 2005), TokenizedDoc([], [(0, 1), (1, 2)], 2003),
            TokenizedDoc([], [(0, 1)], 2001)]
    assert first_cooccurrence_year(docs, (1, 2)) == 2003
    assert first_cooccurrence_year(docs, (1, 3)) is None


def test_csv_writers(tmp_path):
    s, y = [0.2, 0.7, 0.4, 0.9], [0, 1, 0, 1]
    write_roc_csv(roc_auc(s, y), tmp_path / "r.csv")
    write_calibration_csv(calibration_table(s, y), tmp_path / "c.csv")
    write_confidence_csv(confidence_filter_curve(s, y), tmp_path / "f.csv")
    write_trajectories_csv([], tmp_path / "t.csv")
    assert (tmp_path / "r.csv").read_text().startswith("threshold,fpr,tpr\ninf,0.0,0.0\n")
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 11
    assert len((tmp_path / "f.csv").read_text().splitlines()) == 12
    assert (tmp_path / "t.csv").read_text() == "c1,c2,label,year,probability,first_cooc_year\n"
