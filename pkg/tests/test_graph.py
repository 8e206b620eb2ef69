import random
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from dynlink.concepts import TokenizedDoc
from dynlink.graph import (FEATURE_NAMES, CoocGraph, _WalkTables, accumulate, build_cooc_graph,
                           cosine_feature, handcrafted_features, node2vec_walk, node2vec_walk_corpus,
                           read_edges_csv, write_edges_csv, yearly_increments)
from oracles import adjacency_sets, brute_cooc, brute_features


def _doc(concepts, year=2000):
    return TokenizedDoc([], [(i, c) for i, c in enumerate(concepts)], year)


def test_triangle():
    g = build_cooc_graph([_doc([1, 2, 3])], 2000)
    assert sorted(g.edges()) == [(1, 2, 1), (1, 3, 1), (2, 3, 1)]


def test_weight_counts_abstracts():
    g = build_cooc_graph([_doc([1, 2]), _doc([2, 1, 1])], 2000)
    assert g.weight(1, 2) == 2 and g.weight(2, 1) == 2


def test_random_docs_recount():
    rng = random.Random(0)
    docs = [_doc([rng.randrange(12) for _ in range(rng.randint(0, 6))], rng.randint(2000, 2003))
            for _ in range(50)]
    g = build_cooc_graph(docs, 2003)
    assert {(a, b): w for a, b, w in g.edges()} == brute_cooc(d.concepts for d in docs)
    since = build_cooc_graph(docs, 2002, since_year=2001)
    assert {(a, b): w for a, b, w in since.edges()} == brute_cooc(
        d.concepts for d in docs if 2001 <= d.year <= 2002)


def test_symmetry_and_zero_diagonal():
    rng = random.Random(1)
    docs = [_doc([rng.randrange(8) for _ in range(4)]) for _ in range(30)]
    g = build_cooc_graph(docs, 2000)
    for a, nbrs in g.adjacency.items():
        assert a not in nbrs
        for b, w in nbrs.items():
            assert g.adjacency[b][a] == w


def test_cumulative_monotone_in_time():
    rng = random.Random(2)
    docs = [_doc([rng.randrange(10) for _ in range(3)], rng.randint(2000, 2005)) for _ in range(60)]
    cum = accumulate(yearly_increments(docs, range(2000, 2006)))
    for y in range(2000, 2005):
        for a, b, w in cum[y].edges():
            assert cum[y + 1].weight(a, b) >= w
        assert cum[y].adjacency == build_cooc_graph(docs, y).adjacency


def test_edges_csv_round_trip(tmp_path):
    docs = [_doc([1, 2, 3], 2000), _doc([1, 2], 2002)]
    inc = yearly_increments(docs, range(2000, 2003))
    write_edges_csv(inc, tmp_path / "e.csv")
    back = read_edges_csv(tmp_path / "e.csv", years=range(2000, 2003))
    assert {y: g.adjacency for y, g in back.items()} == {y: g.adjacency for y, g in inc.items()}


def test_feature_names():
    assert len(FEATURE_NAMES) == 15 == len(set(FEATURE_NAMES))


def test_isolated_nodes_all_zero():
    g = CoocGraph(2000)
    g.add(7, 8)
    assert not handcrafted_features([g, None, g], 1, 2).any()


def test_path_example():
    g = CoocGraph(2000)
    g.add(1, 0)
    g.add(0, 2)
    f = handcrafted_features([g, CoocGraph(1999), CoocGraph(1998)], 1, 2)
    assert list(f[:6]) == [1, 1, 0, 0, 0, 0]
    assert list(f[6:8]) == [2, 2]
    assert list(f[12:]) == [1, 0, 0]


def test_same_node_rejected():
    with pytest.raises(ValueError):
        handcrafted_features([None, None, None], 3, 3)


def _random_graph(rng, n, p):
    edges = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p]
    g = CoocGraph(0)
    for a, b in edges:
        g.add(a, b, rng.randint(1, 3))
    return g, adjacency_sets(edges)


def test_features_match_set_oracle():
    rng = random.Random(7)
    for _ in range(30):
        n = rng.randint(2, 50)
        pairs = [_random_graph(rng, n, 0.2) for _ in range(3)]
        for _ in range(5):
            v1, v2 = rng.sample(range(n + 2), 2)
            got = handcrafted_features([g for g, _ in pairs], v1, v2)
            assert np.array_equal(got, brute_features([a for _, a in pairs], v1, v2))


def test_features_invariant_to_relabeling_uninvolved():
    rng = random.Random(8)
    g, _ = _random_graph(rng, 20, 0.25)
    perm = list(range(2, 20))
    rng.shuffle(perm)
    mapping = {0: 0, 1: 1, **{old: new for old, new in zip(range(2, 20), perm)}}
    h = CoocGraph(0)
    for a, b, w in g.edges():
        h.add(mapping[a], mapping[b], w)
    assert np.array_equal(handcrafted_features([g] * 3, 0, 1), handcrafted_features([h] * 3, 0, 1))


def test_cosine_cases():
    assert cosine_feature([1, 2], [1, 2]) == pytest.approx(1.0)
    assert cosine_feature([1, 0], [0, 3]) == 0.0
    assert cosine_feature([0, 0], [1, 1]) == 0.0
    expected = 32 / (np.sqrt(14) * np.sqrt(77))
    assert cosine_feature([1, 2, 3], [4, 5, 6]) == pytest.approx(expected, rel=1e-15)
    with pytest.raises(ValueError):
        cosine_feature([1, 2], [1, 2, 3])
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b = rng.normal(size=(2, 5))
        c = cosine_feature(a, b)
        assert -1 <= c <= 1 and c == cosine_feature(b, a)


def test_single_edge_alternates():
    g = CoocGraph(0)
    g.add(1, 2)
    walks = node2vec_walk_corpus(g, walk_len=4, walks_per_node=3, as_tokens=False)
    assert len(walks) == 6
    for w in walks:
        assert len(w) == 4
        assert all(a != b for a, b in zip(w, w[1:]))


def test_isolated_nodes_skipped_and_tokens():
    g = CoocGraph(0)
    g.add(1, 2)
    g.adjacency[9] = {}
    walks = node2vec_walk_corpus(g, walk_len=3, walks_per_node=1)
    assert sorted(w[0] for w in walks) == ["#1", "#2"]


def test_invalid_pq():
    with pytest.raises(ValueError):
        node2vec_walk_corpus(CoocGraph(0), p=0)


def test_unbiased_walk_is_weight_proportional():
    g = CoocGraph(0)
    for a, b, w in [(0, 1, 1), (0, 2, 3), (0, 3, 6), (1, 2, 2), (2, 3, 1), (3, 4, 2)]:
        g.add(a, b, w)
    tables = _WalkTables(g)
    rng = np.random.default_rng(0)
    counts = Counter()
    steps = 0
    while steps < 100_000:
        walk = node2vec_walk(tables, int(rng.integers(0, 5)), 200, 1.0, 1.0, rng)
        counts.update(zip(walk, walk[1:]))
        steps += len(walk) - 1
    for v in g.nodes():
        nbrs = sorted(g.neighbors(v))
        obs = np.array([counts[(v, x)] for x in nbrs], dtype=float)
        w = np.array([g.weight(v, x) for x in nbrs], dtype=float)
        if len(nbrs) < 2:
            continue
        assert chisquare(obs, obs.sum() * w / w.sum()).pvalue > 1e-3


def test_large_q_avoids_outward_moves():
    # Triangle t, v, x plus pendant y on v: from t->v, y is the only move away from t.
    t, v, x, y = 0, 1, 2, 3
    g = CoocGraph(0)
    for a, b in [(t, v), (v, x), (t, x), (v, y)]:
        g.add(a, b)
    tables = _WalkTables(g)
    rng = np.random.default_rng(1)
    cdf = np.cumsum(tables.step_weights(t, v, 1.0, 1000.0))
    draws = np.searchsorted(cdf, rng.random(100_000) * cdf[-1], side="right")
    moves = Counter(int(tables.nbrs[v][i]) for i in draws)
    assert moves[y] / 100_000 < 0.01
    # Also via full walks: every visit to v preceded by t.
    hits = Counter()
    for _ in range(2000):
        walk = node2vec_walk(tables, t, 60, 1.0, 1000.0, rng)
        for a, b, c in zip(walk, walk[1:], walk[2:]):
            if a == t and b == v:
                hits[c] += 1
    assert hits[y] / sum(hits.values()) < 0.01
