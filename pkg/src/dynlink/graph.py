"""Concept co-occurrence graphs, handcrafted pair features and node2vec walks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .concepts import concept_token

_LAGS = ("y", "y-1", "y-2")
FEATURE_NAMES = (
    [f"deg_v{v}_{lag}" for lag in _LAGS for v in (1, 2)]
    + [f"deg2_v{v}_{lag}" for lag in _LAGS for v in (1, 2)]
    + [f"shared_{lag}" for lag in _LAGS]
)


@dataclass
class CoocGraph:
    """Undirected weighted graph; ``adjacency[a][b]`` counts abstracts with both."""

    year: int
    adjacency: dict[int, dict[int, int]] = field(default_factory=dict)

    def add(self, a: int, b: int, w: int = 1) -> None:
        if a == b:
            return
        self.adjacency.setdefault(a, {})
        self.adjacency.setdefault(b, {})
        self.adjacency[a][b] = self.adjacency[a].get(b, 0) + w
        self.adjacency[b][a] = self.adjacency[b].get(a, 0) + w

    def neighbors(self, v: int):
        return self.adjacency.get(v, {}).keys()

    def degree(self, v: int) -> int:
        return len(self.adjacency.get(v, ()))

    def weight(self, a: int, b: int) -> int:
        return self.adjacency.get(a, {}).get(b, 0)

    def has_edge(self, a: int, b: int) -> bool:
        return b in self.adjacency.get(a, {})

    def nodes(self) -> list[int]:
        return sorted(self.adjacency)

    def edges(self):
        for a in sorted(self.adjacency):
            for b in sorted(self.adjacency[a]):
                if a < b:
                    yield a, b, self.adjacency[a][b]

    def num_edges(self) -> int:
        return sum(len(n) for n in self.adjacency.values()) // 2


def build_cooc_graph(docs, up_to_year: int, since_year: int | None = None) -> CoocGraph:
    """Count, per concept pair, the abstracts in ``[since_year, up_to_year]`` mentioning both."""
    graph = CoocGraph(up_to_year)
    for doc in docs:
        if doc.year > up_to_year or (since_year is not None and doc.year < since_year):
            continue
        for a, b in combinations(sorted(doc.concepts), 2):
            graph.add(a, b)
    return graph


def second_order_degree(graph: CoocGraph, v: int) -> int:
    """Number of distinct vertices within distance 2 of ``v``, excluding ``v``."""
    reach = set(graph.neighbors(v))
    for u in list(reach):
        reach.update(graph.neighbors(u))
    reach.discard(v)
    return len(reach)


def shared_neighbors(graph: CoocGraph, a: int, b: int) -> int:
    na, nb = graph.adjacency.get(a, {}), graph.adjacency.get(b, {})
    if len(na) > len(nb):
        na, nb = nb, na
    return sum(1 for x in na if x in nb)


def handcrafted_features(graphs, v1: int, v2: int) -> np.ndarray:
    """15 features from graphs at years y, y-1, y-2 (``None`` for missing years).

    Order: degrees (v1, v2) per year, second-order degrees (v1, v2) per year,
    then shared-neighbor counts per year.
    """
    if v1 == v2:
        raise ValueError("pair features need two distinct concepts")
    graphs = list(graphs)
    if len(graphs) != 3:
        raise ValueError("expected graphs for years y, y-1, y-2")
    deg, deg2, shared = [], [], []
    for g in graphs:
        if g is None:
            deg += [0, 0]
            deg2 += [0, 0]
            shared.append(0)
            continue
        deg += [g.degree(v1), g.degree(v2)]
        deg2 += [second_order_degree(g, v1), second_order_degree(g, v2)]
        shared.append(shared_neighbors(g, v1, v2))
    return np.asarray(deg + deg2 + shared, dtype=np.float64)


def cosine_feature(w1, w2) -> float:
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if w1.shape != w2.shape:
        raise ValueError(f"dimension mismatch: {w1.shape} vs {w2.shape}")
    n1, n2 = np.linalg.norm(w1), np.linalg.norm(w2)
    if n1 == 0 or n2 == 0:
        return 0.0
    return float(np.clip(w1 @ w2 / (n1 * n2), -1.0, 1.0))


class _WalkTables:
    """Sorted neighbor/weight arrays per node for fast biased sampling."""

    def __init__(self, graph: CoocGraph):
        self.nbrs = {}
        self.weights = {}
        self.sets = {}
        for v in graph.nodes():
            ns = sorted(graph.adjacency[v])
            self.nbrs[v] = np.asarray(ns, dtype=np.int64)
            self.weights[v] = np.asarray([graph.adjacency[v][x] for x in ns], dtype=np.float64)
            self.sets[v] = set(ns)

    def step_weights(self, prev: int, cur: int, p: float, q: float) -> np.ndarray:
        w = self.weights[cur].copy()
        prev_nbrs = self.sets[prev]
        for i, x in enumerate(self.nbrs[cur]):
            if x == prev:
                w[i] /= p
            elif x not in prev_nbrs:
                w[i] /= q
        return w


def _draw(rng, weights: np.ndarray) -> int:
    cdf = np.cumsum(weights)
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def node2vec_walk(tables: _WalkTables, start: int, walk_len: int, p: float, q: float, rng) -> list[int]:
    walk = [start]
    while len(walk) < walk_len:
        cur = walk[-1]
        nbrs = tables.nbrs[cur]
        if len(walk) == 1:
            w = tables.weights[cur]
        else:
            w = tables.step_weights(walk[-2], cur, p, q)
        walk.append(int(nbrs[min(_draw(rng, w), len(nbrs) - 1)]))
    return walk


def node2vec_walk_corpus(graph: CoocGraph, p: float = 1.0, q: float = 1.0, walk_len: int = 80,
                         walks_per_node: int = 10, seed: int = 0, as_tokens: bool = True) -> list:
    """Second-order biased random walks from every non-isolated node.

    Walk tokens are ``#<concept_id>`` strings (or raw ids with
    ``as_tokens=False``) so the corpus can go straight into the SGNS trainer.
    """
    if not (p > 0 and q > 0):
        raise ValueError("p and q must be positive")
    rng = np.random.default_rng(seed)
    tables = _WalkTables(graph)
    starts = [v for v in graph.nodes() if graph.degree(v) > 0]
    walks = []
    for _ in range(walks_per_node):
        for i in rng.permutation(len(starts)):
            walk = node2vec_walk(tables, starts[i], walk_len, p, q, rng)
            walks.append([concept_token(v) for v in walk] if as_tokens else walk)
    return walks


def yearly_increments(docs, years) -> dict[int, CoocGraph]:
    """Year-only graphs: each counts just that year's abstracts."""
    out = {y: CoocGraph(y) for y in years}
    for doc in docs:
        g = out.get(doc.year)
        if g is not None:
            for a, b in combinations(sorted(doc.concepts), 2):
                g.add(a, b)
    return out


def accumulate(increments: dict[int, CoocGraph]) -> dict[int, CoocGraph]:
    """Cumulative graphs from year-only graphs."""
    out = {}
    acc = CoocGraph(0)
    for y in sorted(increments):
        for a, b, w in increments[y].edges():
            acc.add(a, b, w)
        out[y] = CoocGraph(y, {k: dict(v) for k, v in acc.adjacency.items()})
    return out


def write_edges_csv(increments: dict[int, CoocGraph], path) -> None:
    """Rows ``concept_a,concept_b,weight,year``; weight counts that year's abstracts only."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["concept_a", "concept_b", "weight", "year"])
        for year in sorted(increments):
            for a, b, w in increments[year].edges():
                writer.writerow([a, b, w, year])


def read_edges_csv(path, years=None) -> dict[int, CoocGraph]:
    """Year-only graphs back from :func:`write_edges_csv`; ``years`` adds empty years."""
    graphs: dict[int, CoocGraph] = {y: CoocGraph(y) for y in (years or ())}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            y = int(row["year"])
            g = graphs.setdefault(y, CoocGraph(y))
            g.add(int(row["concept_a"]), int(row["concept_b"]), int(row["weight"]))
    return graphs


def write_features_csv(rows, path) -> None:
    """``rows`` are ``(c1, c2, features15)`` tuples."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["c1", "c2", *FEATURE_NAMES])
        for c1, c2, feats in rows:
            writer.writerow([c1, c2, *(int(x) for x in feats)])
