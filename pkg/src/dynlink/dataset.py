"""Candidate pair enumeration, labelling, class balancing and feature assembly."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .graph import CoocGraph, cosine_feature, handcrafted_features

logger = logging.getLogger(__name__)

SOURCES = ("word-dynamic", "word-static", "word-hand", "knowledge-hand", "knowledge-node")


@dataclass(frozen=True)
class SplitSpec:
    train_delta: tuple[int, int] = (1994, 2017)
    train_lambda: tuple[int, int] = (2018, 2020)
    test_delta: tuple[int, int] = (1994, 2020)
    test_lambda: tuple[int, int] = (2021, 2023)

    def __post_init__(self):
        for d, l in ((self.train_delta, self.train_lambda), (self.test_delta, self.test_lambda)):
            if d[0] > d[1] or l[0] > l[1]:
                raise ValueError("inverted window")
            if l[0] != d[1] + 1:
                raise ValueError(f"label window {l} must start the year after {d}")
        if self.test_delta[0] != self.train_delta[0]:
            raise ValueError("train and test windows must share their start year")
        shift = self.shift
        if (self.test_lambda[0] - self.train_lambda[0], self.test_lambda[1] - self.train_lambda[1]) != (shift, shift):
            raise ValueError("test windows must be the train windows shifted by a fixed amount")

    @property
    def shift(self) -> int:
        return self.test_delta[1] - self.train_delta[1]

    @classmethod
    def shifted(cls, delta: tuple[int, int], label_years: int, shift: int) -> "SplitSpec":
        lam = (delta[1] + 1, delta[1] + label_years)
        return cls(tuple(delta), lam, (delta[0], delta[1] + shift), (lam[0] + shift, lam[1] + shift))


@dataclass
class PairSample:
    c1: int
    c2: int
    label: int
    feature_vec: np.ndarray | None = None
    source_tag: str | None = None
    swapped: bool = False


def enumerate_candidate_pairs(graph: CoocGraph, concepts, min_degree: int = 1) -> list[tuple[int, int]]:
    """Unordered pairs (sorted ids) of concepts with degree >= ``min_degree`` and no edge."""
    eligible = sorted(c for c in set(concepts) if graph.degree(c) >= min_degree)
    pairs = []
    for i, a in enumerate(eligible):
        nbrs = graph.adjacency.get(a, {})
        for b in eligible[i + 1:]:
            if b not in nbrs:
                pairs.append((a, b))
    return pairs


def label_and_balance(pairs, label_graph: CoocGraph, seed: int = 0, balance: bool = True) -> list[PairSample]:
    """Label 1 iff the pair has an edge in ``label_graph``; downsample the majority class.

    The sample keeps the input order of ``pairs``.
    """
    labels = np.array([1 if label_graph.has_edge(a, b) else 0 for a, b in pairs], dtype=np.int64)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("no positive pairs in the label window")
    keep = np.ones(len(pairs), dtype=bool)
    if balance:
        rng = np.random.default_rng(seed)
        pos_idx = np.flatnonzero(labels == 1)
        neg_idx = np.flatnonzero(labels == 0)
        if len(neg_idx) >= len(pos_idx):
            chosen = rng.choice(neg_idx, size=len(pos_idx), replace=False)
            keep[neg_idx] = False
            keep[chosen] = True
        else:
            logger.warning("fewer negatives (%d) than positives (%d); downsampling positives",
                           len(neg_idx), len(pos_idx))
            chosen = rng.choice(pos_idx, size=len(neg_idx), replace=False)
            keep[pos_idx] = False
            keep[chosen] = True
    return [PairSample(a, b, int(lab)) for (a, b), lab, k in zip(pairs, labels, keep) if k]


def train_val_split(samples, frac_train: float = 0.8, seed: int = 0):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    cut = int(round(frac_train * len(samples)))
    return [samples[i] for i in sorted(order[:cut])], [samples[i] for i in sorted(order[cut:])]


@dataclass
class FeatureInputs:
    """Everything a feature source may need for one window.

    ``timeline`` is read at ``year`` (dynamic source); ``static`` and ``node``
    are one-year timelines; ``graphs`` maps years to cumulative graphs.
    """

    year: int
    timeline: object = None
    static: object = None
    node: object = None
    graphs: dict = field(default_factory=dict)


def _vec(tl, concept: int, year: int, what: str) -> np.ndarray:
    if tl is None:
        raise ValueError(f"no {what} embeddings supplied")
    try:
        return np.asarray(tl.vector(concept, year), dtype=np.float64)
    except KeyError:
        raise KeyError(f"missing {what} vector for concept {concept}") from None


def pair_features(source: str, a: int, b: int, inputs: FeatureInputs) -> np.ndarray:
    y = inputs.year
    if source == "word-dynamic":
        return np.concatenate([_vec(inputs.timeline, a, y, "dynamic"), _vec(inputs.timeline, b, y, "dynamic")])
    if source == "word-static":
        ys = inputs.static.years[0] if inputs.static is not None else y
        return np.concatenate([_vec(inputs.static, a, ys, "static"), _vec(inputs.static, b, ys, "static")])
    if source == "word-hand":
        ys = inputs.static.years[0] if inputs.static is not None else y
        return np.array([cosine_feature(_vec(inputs.static, a, ys, "static"), _vec(inputs.static, b, ys, "static"))])
    if source == "knowledge-hand":
        g = inputs.graphs
        return handcrafted_features([g.get(y), g.get(y - 1), g.get(y - 2)], a, b)
    if source == "knowledge-node":
        yn = inputs.node.years[0] if inputs.node is not None else y
        return np.concatenate([_vec(inputs.node, a, yn, "node"), _vec(inputs.node, b, yn, "node")])
    raise ValueError(f"unknown feature source {source!r}; expected one of {SOURCES}")


def assemble_feature_vectors(samples, source: str, inputs: FeatureInputs, augment: bool = False) -> list[PairSample]:
    """Attach features from ``source``; ``augment`` also emits each pair in swapped order."""
    out = []
    for s in samples:
        vec = pair_features(source, s.c1, s.c2, inputs)
        out.append(PairSample(s.c1, s.c2, s.label, vec, source, False))
        if augment:
            out.append(PairSample(s.c1, s.c2, s.label, pair_features(source, s.c2, s.c1, inputs), source, True))
    return out


def to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray([s.feature_vec for s in samples], dtype=np.float64)
    y = np.asarray([s.label for s in samples], dtype=np.float64)
    return X, y


def write_dataset(samples, csv_path, feature_path) -> None:
    """CSV ``c1,c2,label,source_tag,swapped``; features row-aligned in an ``.npy`` sidecar."""
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["c1", "c2", "label", "source_tag", "swapped"])
        for s in samples:
            w.writerow([s.c1, s.c2, s.label, s.source_tag or "", int(s.swapped)])
    X = np.asarray([s.feature_vec for s in samples], dtype="<f8")
    with open(feature_path, "wb") as fh:
        np.save(fh, X, allow_pickle=False)


def read_dataset(csv_path, feature_path) -> list[PairSample]:
    X = np.load(feature_path, allow_pickle=False)
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != X.shape[0]:
        raise ValueError(f"{csv_path}: {len(rows)} rows but {X.shape[0]} feature vectors")
    return [PairSample(int(r["c1"]), int(r["c2"]), int(r["label"]), X[i], r["source_tag"] or None,
                       bool(int(r["swapped"]))) for i, r in enumerate(rows)]
