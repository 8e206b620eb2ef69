"""ROC/AUC, calibration tables, confidence-filtered AUC and prediction trajectories."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_FRACTIONS = tuple(round(0.05 * i, 2) for i in range(11))


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


@dataclass
class CalibrationTable:
    edges: np.ndarray
    mean_pred: np.ndarray
    pos_rate: np.ndarray
    counts: np.ndarray


@dataclass
class ConfidenceCurve:
    fractions: np.ndarray
    retained: np.ndarray
    auc: np.ndarray


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise ValueError("both classes must be present")
    return scores, labels


def roc_auc(scores, labels) -> RocCurve:
    """ROC curve from a descending threshold sweep; AUC is the trapezoid area.

    Tied scores form a single step, which gives ties half credit.
    """
    scores, labels = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s, l = scores[order], labels[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(l)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / tp[-1]]
    fpr = np.r_[0.0, fp / fp[-1]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(np.r_[np.inf, s[last]], fpr, tpr, auc)


def auc_score(scores, labels) -> float:
    return roc_auc(scores, labels).auc


def calibration_table(scores, labels, bins: int = 10) -> CalibrationTable:
    """Equal-width bins ``[i/B, (i+1)/B)`` over [0, 1], last bin closed."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    idx = np.clip(np.floor(scores * bins).astype(np.int64), 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    sum_pred = np.bincount(idx, weights=scores, minlength=bins)
    sum_pos = np.bincount(idx, weights=labels, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_pred = np.where(counts > 0, sum_pred / np.maximum(counts, 1), np.nan)
        pos_rate = np.where(counts > 0, sum_pos / np.maximum(counts, 1), np.nan)
    return CalibrationTable(np.linspace(0.0, 1.0, bins + 1), mean_pred, pos_rate, counts)


def confidence_order(scores) -> np.ndarray:
    """Indices from least to most confident (|score - 0.5|), stable on ties."""
    return np.argsort(np.abs(np.asarray(scores, dtype=np.float64) - 0.5), kind="stable")


def confidence_filter_curve(scores, labels, fractions=DEFAULT_FRACTIONS) -> ConfidenceCurve:
    """AUC after discarding the ``floor(f*N)`` least confident samples, per ``f``.

    Points whose remainder holds a single class are NaN.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any((fractions < 0) | (fractions >= 1)):
        raise ValueError("fractions must lie in [0, 1)")
    order = confidence_order(scores)
    n = scores.size
    aucs, kept = [], []
    for f in fractions:
        drop = math.floor(f * n + 1e-9)
        keep = np.sort(order[drop:])
        kept.append(keep.size)
        try:
            aucs.append(roc_auc(scores[keep], labels[keep]).auc)
        except ValueError:
            aucs.append(float("nan"))
    return ConfidenceCurve(fractions, np.asarray(kept), np.asarray(aucs))


@dataclass
class Trajectory:
    pair: tuple[int, int]
    years: list[int]
    probs: list[float]
    first_cooc: int | None = None

    def points(self):
        return list(zip(self.years, self.probs))


def first_cooccurrence_year(docs, pair) -> int | None:
    a, b = pair
    years = [d.year for d in docs if a in d.concepts and b in d.concepts]
    return min(years) if years else None


def prediction_trajectory(model, timeline, pair, years, docs=None) -> Trajectory:
    """Score ``pair`` with a fixed model on each year's snapshot."""
    from .mlp import predict_proba

    c1, c2 = pair
    for c in pair:
        if c not in timeline:
            raise KeyError(f"unknown concept {c}")
    rows = [np.concatenate([timeline.vector(c1, y), timeline.vector(c2, y)]) for y in years]
    probs = predict_proba(model, np.asarray(rows, dtype=np.float64))
    first = first_cooccurrence_year(docs, pair) if docs is not None else None
    return Trajectory((c1, c2), list(years), [float(p) for p in probs], first)


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _fmt(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def write_roc_csv(curve: RocCurve, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow([_fmt(t), _fmt(f), _fmt(p)])


def write_calibration_csv(table: CalibrationTable, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["bin_lo", "bin_hi", "mean_pred", "pos_rate", "count"])
        for i, c in enumerate(table.counts):
            w.writerow([_fmt(table.edges[i]), _fmt(table.edges[i + 1]),
                        _fmt(table.mean_pred[i]), _fmt(table.pos_rate[i]), int(c)])


def write_confidence_csv(curve: ConfidenceCurve, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["fraction", "retained", "auc"])
        for f, k, a in zip(curve.fractions, curve.retained, curve.auc):
            w.writerow([_fmt(f), int(k), _fmt(a)])


def write_trajectories_csv(trajectories, path, display=None) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["c1", "c2", "label", "year", "probability", "first_cooc_year"])
        for tr in trajectories:
            name = " + ".join(display.get(c, str(c)) for c in tr.pair) if display else ""
            for year, p in tr.points():
                w.writerow([tr.pair[0], tr.pair[1], name, year, _fmt(p),
                            "" if tr.first_cooc is None else tr.first_cooc])
