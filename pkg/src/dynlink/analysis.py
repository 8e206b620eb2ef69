"""2-D projection, k-means clustering, key-concept tables and plot emission.

The projection is principal-axis (PCA) by power iteration with deflation,
standing in for a nonlinear manifold embedding.
"""

from __future__ import annotations

import csv
import html
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


@dataclass
class Projection2D:
    points: np.ndarray
    axes: np.ndarray
    explained_variance: tuple[float, float]
    mean: np.ndarray
    method: str = "pca-power-iteration"


def _top_eigvec(C: np.ndarray, rng, tol: float, max_iter: int) -> tuple[np.ndarray, float]:
    v = rng.standard_normal(C.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = C @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return v, 0.0
        w /= norm
        if w @ v < 0:
            w = -w
        done = np.linalg.norm(w - v) < tol
        v = w
        if done:
            break
    return v, float(v @ C @ v)


def pca_project(matrix, tol: float = 1e-9, max_iter: int = 1000, seed: int = 0) -> Projection2D:
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    C = Xc.T @ Xc / (X.shape[0] - 1)
    if not np.any(C):
        raise ValueError("data has zero variance")
    rng = np.random.default_rng(seed)
    axes, variances = [], []
    for _ in range(2):
        v, lam = _top_eigvec(C, rng, tol, max_iter)
        lam = max(lam, 0.0)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        axes.append(v)
        variances.append(lam)
        C = C - lam * np.outer(v, v)
    A = np.vstack(axes)
    return Projection2D(Xc @ A.T, A, (variances[0], variances[1]), mean)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    wcss: float
    history: list[float] = field(default_factory=list)


def _wcss(X, labels, centroids) -> float:
    return float(np.sum((X - centroids[labels]) ** 2))


def _assign(X, centroids) -> np.ndarray:
    d = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)


def _init_centroids(X, k, rng) -> np.ndarray:
    # D^2-weighted seeding: each new center is drawn far from those chosen.
    centers = [X[rng.integers(X.shape[0])]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        if d2.sum() == 0:
            idx = int(rng.integers(X.shape[0]))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * d2.sum(), side="right"))
            idx = min(idx, X.shape[0] - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def lloyd(X, centroids, max_iter: int = 300) -> KMeansResult:
    X = np.asarray(X, dtype=np.float64)
    centroids = np.array(centroids, dtype=np.float64)
    k = centroids.shape[0]
    labels = _assign(X, centroids)
    history = [_wcss(X, labels, centroids)]
    for _ in range(max_iter):
        for j in range(k):
            members = X[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                # Empty cluster: move it onto the point currently worst served.
                far = int(np.argmax(((X - centroids[labels]) ** 2).sum(axis=1)))
                centroids[j] = X[far]
                labels[far] = j
        history.append(_wcss(X, labels, centroids))
        new = _assign(X, centroids)
        if np.array_equal(new, labels):
            break
        labels = new
        history.append(_wcss(X, labels, centroids))
    for j in range(k):
        if np.any(labels == j):
            centroids[j] = X[labels == j].mean(axis=0)
    return KMeansResult(labels, centroids, _wcss(X, labels, centroids), history)


def kmeans_cluster(points, k: int = 9, seed: int = 0, restarts: int = 10, max_iter: int = 300) -> KMeansResult:
    X = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be positive")
    if k > len(np.unique(X, axis=0)):
        raise ValueError(f"k={k} exceeds the number of distinct points")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        res = lloyd(X, _init_centroids(X, k, rng), max_iter)
        if best is None or res.wcss < best.wcss:
            best = res
    return best


@dataclass
class ClusterReport:
    labels: np.ndarray
    centroids: np.ndarray
    top: dict[int, list[int]]
    concept_ids: np.ndarray


def _ranks(values) -> np.ndarray:
    # Ordinal ranks from 1; ties keep input order.
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.int64)
    ranks[order] = np.arange(1, len(values) + 1)
    return ranks


def cluster_report(points, clusters: KMeansResult, concept_ids, frequencies: dict, m: int = 3) -> ClusterReport:
    """Per cluster, the ``m`` concepts with the lowest proximity-rank + frequency-rank sum."""
    X = np.asarray(points, dtype=np.float64)
    concept_ids = np.asarray(concept_ids)
    top = {}
    for j in range(clusters.centroids.shape[0]):
        idx = np.flatnonzero(clusters.labels == j)
        if not len(idx):
            top[j] = []
            continue
        dist = np.linalg.norm(X[idx] - clusters.centroids[j], axis=1)
        freq = np.array([frequencies.get(int(concept_ids[i]), 0) for i in idx], dtype=np.float64)
        score = _ranks(dist) + _ranks(-freq)
        order = sorted(range(len(idx)), key=lambda t: (score[t], int(concept_ids[idx[t]])))
        top[j] = [int(concept_ids[idx[t]]) for t in order[:m]]
    return ClusterReport(clusters.labels, clusters.centroids, top, concept_ids)


# Plot emission: CSV for every figure plus a minimal standalone SVG.

def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else repr(x)


class _Svg:
    W, H, PAD = 480, 360, 48

    def __init__(self, title: str, xlim, ylim, xlabel: str = "", ylabel: str = ""):
        self.xlim = self._safe(xlim)
        self.ylim = self._safe(ylim)
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.W}" height="{self.H}" '
            f'viewBox="0 0 {self.W} {self.H}">',
            f'<rect x="0" y="0" width="{self.W}" height="{self.H}" style="fill:#ffffff"/>',
            f'<text x="{self.W / 2}" y="20" style="font:14px sans-serif;text-anchor:middle">{html.escape(title)}</text>',
            f'<rect x="{self.PAD}" y="{self.PAD}" width="{self.W - 2 * self.PAD}" height="{self.H - 2 * self.PAD}" '
            'style="fill:none;stroke:#333333;stroke-width:1"/>',
            f'<text x="{self.W / 2}" y="{self.H - 10}" style="font:11px sans-serif;text-anchor:middle">{html.escape(xlabel)}</text>',
            f'<text x="12" y="{self.H / 2}" style="font:11px sans-serif;text-anchor:middle" '
            f'transform="rotate(-90 12 {self.H / 2})">{html.escape(ylabel)}</text>',
        ]
        for lo, hi, pos in ((self.xlim[0], self.xlim[1], "x"), (self.ylim[0], self.ylim[1], "y")):
            for v in (lo, hi):
                px, py = (self.sx(v), self.H - self.PAD + 14) if pos == "x" else (self.PAD - 4, self.sy(v) + 4)
                anchor = "middle" if pos == "x" else "end"
                self.parts.append(f'<text x="{px:.2f}" y="{py:.2f}" style="font:10px sans-serif;'
                                  f'text-anchor:{anchor}">{v:.3g}</text>')

    @staticmethod
    def _safe(lim):
        lo, hi = float(lim[0]), float(lim[1])
        if not (math.isfinite(lo) and math.isfinite(hi)):
            return 0.0, 1.0
        if hi <= lo:
            return lo - 0.5, lo + 0.5
        return lo, hi

    def sx(self, x):
        return self.PAD + (x - self.xlim[0]) / (self.xlim[1] - self.xlim[0]) * (self.W - 2 * self.PAD)

    def sy(self, y):
        return self.H - self.PAD - (y - self.ylim[0]) / (self.ylim[1] - self.ylim[0]) * (self.H - 2 * self.PAD)

    def line(self, xs, ys, color="#1f77b4", dashed=False):
        pts = " ".join(f"{self.sx(x):.2f},{self.sy(y):.2f}" for x, y in zip(xs, ys)
                       if math.isfinite(x) and math.isfinite(y))
        if pts:
            dash = ";stroke-dasharray:4 3" if dashed else ""
            self.parts.append(f'<polyline points="{pts}" style="fill:none;stroke:{color};stroke-width:1.5{dash}"/>')

    def dots(self, xs, ys, colors, r=2.5):
        for x, y, c in zip(xs, ys, colors):
            if math.isfinite(x) and math.isfinite(y):
                self.parts.append(f'<circle cx="{self.sx(x):.2f}" cy="{self.sy(y):.2f}" r="{r}" style="fill:{c}"/>')

    def bars(self, xs, heights, width, color="#1f77b4"):
        for x, h in zip(xs, heights):
            x0, x1 = self.sx(x - width / 2), self.sx(x + width / 2)
            y0, y1 = self.sy(0), self.sy(h)
            self.parts.append(f'<rect x="{x0:.2f}" y="{y1:.2f}" width="{x1 - x0:.2f}" height="{y0 - y1:.2f}" '
                              f'style="fill:{color}"/>')

    def save(self, path: Path) -> None:
        path.write_text("\n".join(self.parts + ["</svg>"]) + "\n")


def _lim(values, pad=0.05):
    vals = [float(v) for v in values if math.isfinite(float(v))]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    span = hi - lo or 1.0
    return lo - pad * span, hi + pad * span


def emit_scatter(projection: Projection2D, clusters, concept_ids, out_dir, display=None, name="scatter") -> list[Path]:
    out_dir = Path(out_dir)
    rows = []
    labels = clusters.labels if clusters is not None else np.zeros(len(concept_ids), dtype=int)
    for cid, (x, y), lab in zip(concept_ids, projection.points, labels):
        rows.append([int(cid), (display or {}).get(int(cid), ""), _num(x), _num(y), int(lab)])
    csv_path = out_dir / f"{name}.csv"
    _write_csv(csv_path, ["concept_id", "concept", "x", "y", "cluster"], rows)
    svg = _Svg("Concept embeddings (principal axes)", _lim(projection.points[:, 0]), _lim(projection.points[:, 1]),
               "axis 1", "axis 2")
    svg.dots(projection.points[:, 0], projection.points[:, 1], [PALETTE[int(l) % len(PALETTE)] for l in labels])
    svg.save(out_dir / f"{name}.svg")
    return [csv_path, out_dir / f"{name}.svg"]


def emit_cluster_table(report: ClusterReport, out_dir, display=None, name="clusters") -> list[Path]:
    rows = []
    for j in sorted(report.top):
        for rank, cid in enumerate(report.top[j], 1):
            rows.append([j, rank, cid, (display or {}).get(cid, "")])
    path = Path(out_dir) / f"{name}.csv"
    _write_csv(path, ["cluster", "rank", "concept_id", "concept"], rows)
    return [path]


def emit_roc(curves: dict, out_dir, name="roc") -> list[Path]:
    out_dir = Path(out_dir)
    rows = []
    svg = _Svg("ROC", (0, 1), (0, 1), "false positive rate", "true positive rate")
    svg.line([0, 1], [0, 1], "#999999", dashed=True)
    for i, (label, curve) in enumerate(sorted(curves.items())):
        for f, t in zip(curve.fpr, curve.tpr):
            rows.append([label, _num(f), _num(t), _num(curve.auc)])
        svg.line(curve.fpr, curve.tpr, PALETTE[i % len(PALETTE)])
    _write_csv(out_dir / f"{name}.csv", ["source", "fpr", "tpr", "auc"], rows)
    svg.save(out_dir / f"{name}.svg")
    return [out_dir / f"{name}.csv", out_dir / f"{name}.svg"]


def emit_calibration(table, out_dir, name="calibration") -> list[Path]:
    out_dir = Path(out_dir)
    rows = [[_num(table.edges[i]), _num(table.edges[i + 1]), _num(table.mean_pred[i]),
             _num(table.pos_rate[i]), int(table.counts[i])] for i in range(len(table.counts))]
    _write_csv(out_dir / f"{name}.csv", ["bin_lo", "bin_hi", "mean_pred", "pos_rate", "count"], rows)
    svg = _Svg("Calibration", (0, 1), (0, 1), "predicted probability", "fraction positive")
    svg.line([0, 1], [0, 1], "#ff7f0e", dashed=True)
    occupied = table.counts > 0
    svg.line(table.mean_pred[occupied], table.pos_rate[occupied])
    svg.dots(table.mean_pred[occupied], table.pos_rate[occupied], ["#1f77b4"] * int(occupied.sum()))
    svg.save(out_dir / f"{name}.svg")
    return [out_dir / f"{name}.csv", out_dir / f"{name}.svg"]


def emit_confidence(curve, out_dir, name="confidence") -> list[Path]:
    out_dir = Path(out_dir)
    rows = [[_num(f), int(k), _num(a)] for f, k, a in zip(curve.fractions, curve.retained, curve.auc)]
    _write_csv(out_dir / f"{name}.csv", ["fraction", "retained", "auc"], rows)
    svg = _Svg("AUC vs. discarded low-confidence fraction", _lim(curve.fractions), _lim(curve.auc),
               "fraction discarded", "AUC")
    svg.line(curve.fractions, curve.auc)
    svg.save(out_dir / f"{name}.svg")
    return [out_dir / f"{name}.csv", out_dir / f"{name}.svg"]


def emit_trajectories(trajectories, out_dir, display=None, name="trajectories") -> list[Path]:
    out_dir = Path(out_dir)
    rows = []
    for tr in trajectories:
        label = " + ".join((display or {}).get(c, str(c)) for c in tr.pair)
        for year, p in zip(tr.years, tr.probs):
            rows.append([tr.pair[0], tr.pair[1], label, year, _num(p),
                         "" if tr.first_cooc is None else tr.first_cooc])
    _write_csv(out_dir / f"{name}.csv", ["c1", "c2", "label", "year", "probability", "first_cooc_year"], rows)
    years = [y for tr in trajectories for y in tr.years]
    svg = _Svg("Prediction trajectories", _lim(years, 0.0) if years else (0, 1), (0, 1), "year", "probability")
    for i, tr in enumerate(trajectories):
        color = PALETTE[i % len(PALETTE)]
        svg.line(tr.years, tr.probs, color)
        if tr.first_cooc is not None and tr.first_cooc in tr.years:
            k = tr.years.index(tr.first_cooc)
            svg.dots([tr.first_cooc], [tr.probs[k]], [color], r=5)
    svg.save(out_dir / f"{name}.svg")
    return [out_dir / f"{name}.csv", out_dir / f"{name}.svg"]


def emit_papers_per_year(stats, out_dir, name="papers_per_year") -> list[Path]:
    out_dir = Path(out_dir)
    years = sorted(stats.papers_per_year)
    rows = [[y, stats.papers_per_year[y], stats.tokens_per_year.get(y, 0)] for y in years]
    _write_csv(out_dir / f"{name}.csv", ["year", "papers", "tokens"], rows)
    counts = [stats.papers_per_year[y] for y in years]
    svg = _Svg("Papers per year", _lim(years) if years else (0, 1), (0, max(counts) * 1.05 if counts else 1),
               "year", "papers")
    svg.bars(years, counts, 0.8)
    svg.save(out_dir / f"{name}.svg")
    return [out_dir / f"{name}.csv", out_dir / f"{name}.svg"]


def emit_plots(artifacts: dict, out_dir, display=None) -> list[Path]:
    """Write CSV + SVG for each figure-like artifact present in ``artifacts``.

    Recognised keys: ``projection`` (with ``clusters`` and ``concept_ids``),
    ``report``, ``roc`` (source -> RocCurve), ``calibration``,
    ``confidence``, ``trajectories`` and ``stats``.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create plot directory {out_dir}: {exc}") from exc
    written: list[Path] = []
    if "projection" in artifacts:
        written += emit_scatter(artifacts["projection"], artifacts.get("clusters"),
                                artifacts["concept_ids"], out_dir, display)
    if "report" in artifacts:
        written += emit_cluster_table(artifacts["report"], out_dir, display)
    if "roc" in artifacts:
        written += emit_roc(artifacts["roc"], out_dir)
    if "calibration" in artifacts:
        written += emit_calibration(artifacts["calibration"], out_dir)
    if "confidence" in artifacts:
        written += emit_confidence(artifacts["confidence"], out_dir)
    if "trajectories" in artifacts:
        written += emit_trajectories(artifacts["trajectories"], out_dir, display)
    if "stats" in artifacts:
        written += emit_papers_per_year(artifacts["stats"], out_dir)
    return written
