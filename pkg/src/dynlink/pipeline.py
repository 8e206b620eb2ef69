"""In-memory composition of the stages: documents -> embeddings -> pairs -> classifier -> metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import dataset as ds
from .concepts import ConceptLexicon, replace_concepts
from .corpus import normalize_text
from .evaluation import RocCurve, roc_auc
from .graph import CoocGraph, accumulate, node2vec_walk_corpus, yearly_increments
from .mlp import FitConfig, MlpModel, fit, predict_proba
from .sgns import EmbeddingTimeline, TrainConfig, backfill_timeline, build_vocab, train_dynamic, train_static

logger = logging.getLogger(__name__)


def tokenize_records(records, lexicon: ConceptLexicon):
    return [replace_concepts(normalize_text(r.text), lexicon, r.year) for r in records]


def docs_by_year(docs, years: tuple[int, int]) -> dict[int, list]:
    out = {y: [] for y in range(years[0], years[1] + 1)}
    for d in docs:
        if years[0] <= d.year <= years[1]:
            out[d.year].append(d)
    return out


def window_docs(docs, window: tuple[int, int]) -> list:
    return [d for d in docs if window[0] <= d.year <= window[1]]


@dataclass
class NodeConfig:
    p: float = 1.0
    q: float = 1.0
    walk_len: int = 80
    walks_per_node: int = 10


def dynamic_embeddings(docs, years: tuple[int, int], cfg: TrainConfig, first_seen=None, concepts=None) -> EmbeddingTimeline:
    slices = docs_by_year(docs, years)
    vocab = build_vocab(d for y in sorted(slices) for d in slices[y])
    timeline = train_dynamic(slices, cfg, vocab=vocab, first_seen=first_seen)
    return backfill_timeline(timeline, timeline.first_seen, concepts)


def static_embeddings(docs, window: tuple[int, int], cfg: TrainConfig) -> EmbeddingTimeline:
    return train_static(window_docs(docs, window), cfg, year=window[1])


def node_embeddings(graph: CoocGraph, cfg: TrainConfig, node_cfg: NodeConfig, seed: int) -> EmbeddingTimeline:
    walks = node2vec_walk_corpus(graph, node_cfg.p, node_cfg.q, node_cfg.walk_len, node_cfg.walks_per_node, seed)
    return train_static(walks, cfg, year=graph.year)


@dataclass
class PairSets:
    train: list
    val: list
    test: list


def candidate_samples(docs, split: ds.SplitSpec, concepts, min_degree: int, seed: int,
                      cumulative: dict[int, CoocGraph] | None = None) -> tuple[list, list]:
    """Balanced, labelled (train+val) and test pair lists, without features."""
    if cumulative is None:
        last = split.test_lambda[1]
        cumulative = accumulate(yearly_increments(docs, range(split.train_delta[0], last + 1)))
    out = []
    for k, (delta, lam) in enumerate(((split.train_delta, split.train_lambda),
                                      (split.test_delta, split.test_lambda))):
        g_delta = cumulative[delta[1]]
        g_lambda = _window_graph(docs, lam)
        pairs = ds.enumerate_candidate_pairs(g_delta, concepts, min_degree)
        out.append(ds.label_and_balance(pairs, g_lambda, seed=seed + k))
    return out[0], out[1]


def _window_graph(docs, window) -> CoocGraph:
    from .graph import build_cooc_graph
    return build_cooc_graph(window_docs(docs, window), window[1], since_year=window[0])


@dataclass
class SourceResult:
    source: str
    auc: float
    roc: RocCurve
    scores: np.ndarray
    labels: np.ndarray
    model: MlpModel
    history: list
    test: list = field(default_factory=list)


def train_and_score(source: str, labelled_train, labelled_test, train_inputs, test_inputs,
                    fit_cfg: FitConfig, seed: int) -> SourceResult:
    tr, va = ds.train_val_split(labelled_train, 0.8, seed)
    tr = ds.assemble_feature_vectors(tr, source, train_inputs, augment=True)
    va = ds.assemble_feature_vectors(va, source, train_inputs, augment=False)
    te = ds.assemble_feature_vectors(labelled_test, source, test_inputs, augment=False)
    X, y = ds.to_arrays(tr)
    Xv, yv = ds.to_arrays(va)
    Xt, yt = ds.to_arrays(te)
    model = MlpModel(X.shape[1], fit_cfg.hidden, fit_cfg.dropout, fit_cfg.head_relu, seed=seed,
                     bn_momentum=fit_cfg.bn_momentum, bn_eps=fit_cfg.bn_eps, prelu_init=fit_cfg.prelu_init)
    model, history = fit(model, (X, y), (Xv, yv), fit_cfg)
    scores = predict_proba(model, Xt)
    roc = roc_auc(scores, yt)
    return SourceResult(source, roc.auc, roc, scores, yt, model, history, te)


def run_experiment(records, lexicon: ConceptLexicon, split: ds.SplitSpec, train_cfg: TrainConfig,
                   fit_cfg: FitConfig, sources=ds.SOURCES, seed: int = 0, min_degree: int = 1,
                   node_cfg: NodeConfig = NodeConfig()) -> dict[str, SourceResult]:
    """Full in-memory benchmark for the requested feature sources."""
    docs = tokenize_records(records, lexicon)
    years = (split.train_delta[0], max(d.year for d in docs))
    cumulative = accumulate(yearly_increments(docs, range(years[0], max(years[1], split.test_lambda[1]) + 1)))
    concepts = range(len(lexicon))
    train_s, test_s = candidate_samples(docs, split, concepts, min_degree, seed, cumulative)
    inputs = {
        "train": ds.FeatureInputs(split.train_delta[1], graphs=cumulative),
        "test": ds.FeatureInputs(split.test_delta[1], graphs=cumulative),
    }
    if "word-dynamic" in sources:
        tl = dynamic_embeddings(docs, years, train_cfg, concepts=concepts)
        inputs["train"].timeline = inputs["test"].timeline = tl
    if {"word-static", "word-hand"} & set(sources):
        inputs["train"].static = static_embeddings(docs, split.train_delta, train_cfg)
        inputs["test"].static = static_embeddings(docs, split.test_delta, train_cfg)
    if "knowledge-node" in sources:
        inputs["train"].node = node_embeddings(cumulative[split.train_delta[1]], train_cfg, node_cfg, seed)
        inputs["test"].node = node_embeddings(cumulative[split.test_delta[1]], train_cfg, node_cfg, seed)
    results = {}
    for source in sources:
        results[source] = train_and_score(source, train_s, test_s, inputs["train"], inputs["test"], fit_cfg, seed)
        logger.info("%s: test AUC %.3f", source, results[source].auc)
    return results
