"""Skip-gram with negative sampling, trained year by year with warm starts.

The per-pair update lives in two places: :func:`sgns_step` is the readable
numpy version used for checking, and ``_sgd_pairs`` is the compiled loop used
for training. Both apply the same update, computed at pre-update values.
"""

from __future__ import annotations

import logging
import struct
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .concepts import concept_of, concept_token, is_concept_token

logger = logging.getLogger(__name__)

MAGIC = b"DWEB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")
# Bounds the pair/negative buffers built per chunk of documents.
_CHUNK_TOKENS = 200_000


@dataclass(frozen=True)
class TrainConfig:
    window: int = 10
    dim: int = 128
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_learning_rate: float = 0.0001
    subsample_threshold: float = 1e-3
    unigram_power: float = 0.75
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class SgnsModel:
    W_in: np.ndarray
    W_out: np.ndarray
    vocab: dict[str, int]
    epoch_losses: list[float] = field(default_factory=list)
    pairs_trained: int = 0

    @property
    def dim(self) -> int:
        return self.W_in.shape[1]

    def copy(self) -> "SgnsModel":
        return SgnsModel(self.W_in.copy(), self.W_out.copy(), dict(self.vocab))

    def vector(self, token: str) -> np.ndarray:
        return self.W_in[self.vocab[token]]


def build_vocab(docs) -> dict[str, int]:
    """Token -> row, ordered by descending count then token for stability."""
    counts = Counter()
    for doc in docs:
        counts.update(_tokens(doc))
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return {tok: i for i, (tok, _) in enumerate(ordered)}


def init_model(vocab, cfg: TrainConfig) -> SgnsModel:
    if cfg.dim < 1:
        raise ValueError("embedding dimension must be positive")
    if not vocab:
        raise ValueError("empty vocabulary")
    if not isinstance(vocab, dict):
        vocab = {tok: i for i, tok in enumerate(vocab)}
    n = cfg.dim
    W_in = np.empty((len(vocab), n))
    for tok, row in vocab.items():
        # Per-token streams: a token starts from the same vector whatever the vocabulary.
        rng = np.random.default_rng([cfg.seed, zlib.crc32(tok.encode("utf-8"))])
        W_in[row] = rng.uniform(-0.5 / n, 0.5 / n, size=n)
    W_out = np.zeros((len(vocab), n))
    return SgnsModel(W_in, W_out, dict(vocab))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def sgns_loss(v, u, u_neg) -> float:
    """-log sig(u.v) - sum log sig(-u_neg.v) for one center vector ``v``."""
    return float(-_log_sigmoid(u @ v) - np.sum(_log_sigmoid(-(u_neg @ v))))


def sgns_step(model: SgnsModel, center: int, context: int, negatives, lr: float) -> float:
    """One SGD step on a (center, context) pair with negative rows.

    Returns the loss before the update. All three gradients are taken at the
    pre-update weights; repeated negative rows accumulate.
    """
    if not lr > 0:
        raise ValueError("lr must be positive")
    negatives = np.asarray(negatives, dtype=np.int64)
    v = model.W_in[center].copy()
    u = model.W_out[context].copy()
    u_neg = model.W_out[negatives]
    loss = sgns_loss(v, u, u_neg)
    g_pos = _sigmoid(u @ v) - 1.0
    g_neg = _sigmoid(u_neg @ v)
    grad_v = g_pos * u + g_neg @ u_neg
    model.W_out[context] -= lr * g_pos * v
    np.subtract.at(model.W_out, negatives, lr * np.outer(g_neg, v))
    model.W_in[center] -= lr * grad_v
    return loss


@numba.njit(cache=True, fastmath=False)
def _log1pexp(x):
    if x > 30.0:
        return x
    if x < -30.0:
        return np.exp(x)
    return np.log1p(np.exp(x))


@numba.njit(cache=True)
def _pair_update(W_in, W_out, c, o, negs, lr, grad_v, gn):
    dim = W_in.shape[1]
    k = negs.shape[0]
    dot = 0.0
    for d in range(dim):
        dot += W_out[o, d] * W_in[c, d]
    g = 0.5 * (1.0 + np.tanh(0.5 * dot)) - 1.0
    loss = _log1pexp(-dot)
    for d in range(dim):
        grad_v[d] = g * W_out[o, d]
    for j in range(k):
        r = negs[j]
        dn = 0.0
        for d in range(dim):
            dn += W_out[r, d] * W_in[c, d]
        gn[j] = 0.5 * (1.0 + np.tanh(0.5 * dn))
        loss += _log1pexp(dn)
        for d in range(dim):
            grad_v[d] += gn[j] * W_out[r, d]
    for d in range(dim):
        W_out[o, d] -= lr * g * W_in[c, d]
    for j in range(k):
        r = negs[j]
        for d in range(dim):
            W_out[r, d] -= lr * gn[j] * W_in[c, d]
    for d in range(dim):
        W_in[c, d] -= lr * grad_v[d]
    return loss


@numba.njit(cache=True)
def _sgd_range(W_in, W_out, centers, contexts, negs, lr_start, lr_min, done, total, lo, hi):
    grad_v = np.empty(W_in.shape[1])
    gn = np.empty(negs.shape[1])
    loss = 0.0
    for p in range(lo, hi):
        lr = lr_start - (lr_start - lr_min) * ((done + p) / total)
        if lr < lr_min:
            lr = lr_min
        loss += _pair_update(W_in, W_out, centers[p], contexts[p], negs[p], lr, grad_v, gn)
    return loss


@numba.njit(cache=True)
def _sgd_pairs(W_in, W_out, centers, contexts, negs, lr_start, lr_min, done, total):
    return _sgd_range(W_in, W_out, centers, contexts, negs, lr_start, lr_min, done, total,
                      0, centers.shape[0])


@numba.njit(cache=True, parallel=True)
def _sgd_pairs_hogwild(W_in, W_out, centers, contexts, negs, lr_start, lr_min, done, total, workers):
    # Workers share the weight matrices without locks; lost updates are accepted.
    n = centers.shape[0]
    block = (n + workers - 1) // workers
    losses = np.zeros(workers)
    for w in numba.prange(workers):
        lo = w * block
        hi = min(n, lo + block)
        losses[w] = _sgd_range(W_in, W_out, centers, contexts, negs, lr_start, lr_min,
                               done, total, lo, hi)
    return losses.sum()


@numba.njit(cache=True)
def _window_pairs(n, reduced):
    total = 0
    for i in range(n):
        b = reduced[i]
        total += min(b, i) + min(b, n - 1 - i)
    c = np.empty(total, dtype=np.int64)
    o = np.empty(total, dtype=np.int64)
    p = 0
    for i in range(n):
        b = reduced[i]
        for j in range(max(0, i - b), min(n, i + b + 1)):
            if j != i:
                c[p] = i
                o[p] = j
                p += 1
    return c, o


def _tokens(doc):
    return doc.tokens if hasattr(doc, "tokens") else doc


def _encode(docs, vocab) -> list[np.ndarray]:
    out = []
    for doc in docs:
        rows = [vocab[t] for t in _tokens(doc) if t in vocab]
        if len(rows) > 1:
            out.append(np.asarray(rows, dtype=np.int64))
    return out


def window_pairs(n: int, reduced: np.ndarray):
    """(center, context) position pairs for a document of length ``n``.

    ``reduced[i]`` is the effective window at position ``i``; pairs are
    ordered by center position, then by context position.
    """
    return _window_pairs(n, np.asarray(reduced, dtype=np.int64))


def noise_table(counts: np.ndarray, power: float, size: int = 1_000_000) -> np.ndarray:
    """Row lookup table whose uniform sampling follows ``counts ** power``."""
    weights = counts.astype(np.float64) ** power
    weights[counts == 0] = 0.0
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    slots = (np.arange(size) + 0.5) / size
    return np.minimum(np.searchsorted(cdf, slots, side="right"), len(cdf) - 1)


def _keep_probability(counts: np.ndarray, threshold: float) -> np.ndarray:
    if threshold <= 0:
        return np.ones(counts.shape[0])
    freq = counts / counts.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        keep = (np.sqrt(freq / threshold) + 1.0) * threshold / freq
    keep[counts == 0] = 0.0
    return np.minimum(keep, 1.0)


def _epoch_pairs(encoded, keep, window, rng):
    """Yield (centers, contexts) row arrays for chunks of documents."""
    buf_c, buf_o, size = [], [], 0
    for rows in encoded:
        if keep is not None:
            rows = rows[rng.random(rows.shape[0]) < keep[rows]]
        if rows.shape[0] < 2:
            continue
        reduced = rng.integers(1, window + 1, size=rows.shape[0])
        c, o = window_pairs(rows.shape[0], reduced)
        buf_c.append(rows[c])
        buf_o.append(rows[o])
        size += rows.shape[0]
        if size >= _CHUNK_TOKENS:
            yield np.concatenate(buf_c), np.concatenate(buf_o)
            buf_c, buf_o, size = [], [], 0
    if buf_c:
        yield np.concatenate(buf_c), np.concatenate(buf_o)


def _expected_pairs(encoded, keep, window) -> float:
    # Expected pair count per epoch; the linear decay schedule is laid over it.
    mean_pairs = 0.0
    for rows in encoded:
        n = rows.shape[0]
        p = 1.0 if keep is None else float(keep[rows].mean())
        m = n * p
        ks = np.arange(1, window + 1)
        mean_pairs += 2.0 * np.mean([min(k, max(m - 1, 0)) for k in ks]) * m
    return max(mean_pairs, 1.0)


def train_year(model: SgnsModel, docs, cfg: TrainConfig, rng=None):
    """Train ``model`` in place on one slice of documents.

    Returns ``(model, mean_loss)`` where ``mean_loss`` is the mean per-pair
    loss averaged over epochs, or ``None`` when the slice produced no pairs.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    encoded = _encode(docs, model.vocab)
    model.epoch_losses = []
    if not encoded or cfg.epochs == 0:
        return model, None
    counts = np.bincount(np.concatenate(encoded), minlength=len(model.vocab))
    table = noise_table(counts, cfg.unigram_power)
    keep = None if cfg.subsample_threshold <= 0 else _keep_probability(counts, cfg.subsample_threshold)
    total = _expected_pairs(encoded, keep, cfg.window) * cfg.epochs
    lr_min = min(cfg.min_learning_rate, cfg.learning_rate)
    done = 0
    for _ in range(cfg.epochs):
        epoch_loss = 0.0
        epoch_pairs = 0
        for centers, contexts in _epoch_pairs(encoded, keep, cfg.window, rng):
            negs = table[rng.integers(0, table.shape[0], size=(centers.shape[0], cfg.negatives))]
            if cfg.workers > 1:
                numba.set_num_threads(min(cfg.workers, numba.config.NUMBA_NUM_THREADS))
                loss = _sgd_pairs_hogwild(model.W_in, model.W_out, centers, contexts, negs,
                                          cfg.learning_rate, lr_min, done, total, cfg.workers)
            else:
                loss = _sgd_pairs(model.W_in, model.W_out, centers, contexts, negs,
                                  cfg.learning_rate, lr_min, done, total)
            done += centers.shape[0]
            epoch_pairs += centers.shape[0]
            epoch_loss += loss
        model.pairs_trained += epoch_pairs
        model.epoch_losses.append(epoch_loss / epoch_pairs if epoch_pairs else float("nan"))
    valid = [x for x in model.epoch_losses if np.isfinite(x)]
    return model, (float(np.mean(valid)) if valid else None)


@dataclass
class EmbeddingTimeline:
    """Per-year concept vectors read from the input layer.

    ``vectors[t, i]`` is the vector of concept ``concept_ids[i]`` in year
    ``years[t]``. ``backfilled`` is a boolean mask of the same leading shape.
    """

    years: list[int]
    concept_ids: np.ndarray
    vectors: np.ndarray
    first_seen: dict[int, int]
    backfilled: np.ndarray
    missing: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.concept_ids = np.asarray(self.concept_ids, dtype=np.int64)
        self._index = {int(c): i for i, c in enumerate(self.concept_ids)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[2]

    def __contains__(self, concept_id) -> bool:
        return int(concept_id) in self._index

    def vector(self, concept_id: int, year: int) -> np.ndarray:
        try:
            i = self._index[int(concept_id)]
        except KeyError:
            raise KeyError(f"no vector for concept {concept_id}") from None
        return self.vectors[self.years.index(year), i]

    def snapshot(self, year: int) -> np.ndarray:
        return self.vectors[self.years.index(year)]

    def backfilled_pairs(self) -> set[tuple[int, int]]:
        t_idx, c_idx = np.nonzero(self.backfilled)
        return {(int(self.concept_ids[c]), self.years[t]) for t, c in zip(t_idx, c_idx)}

    def __eq__(self, other):
        if not isinstance(other, EmbeddingTimeline):
            return NotImplemented
        return (self.years == other.years
                and np.array_equal(self.concept_ids, other.concept_ids)
                and self.vectors.dtype == other.vectors.dtype
                and self.vectors.tobytes() == other.vectors.tobytes()
                and self.first_seen == other.first_seen
                and np.array_equal(self.backfilled, other.backfilled))


def concept_rows(vocab: dict[str, int]) -> tuple[np.ndarray, np.ndarray]:
    """Concept ids present in ``vocab`` (sorted) and their matrix rows."""
    ids = sorted(concept_of(t) for t in vocab if is_concept_token(t))
    rows = [vocab[concept_token(c)] for c in ids]
    return np.asarray(ids, dtype=np.int64), np.asarray(rows, dtype=np.int64)


def year_rng(seed: int, year: int) -> np.random.Generator:
    return np.random.default_rng([seed, year])


def train_dynamic(slices: dict, cfg: TrainConfig, vocab=None, observer=None,
                  first_seen=None) -> EmbeddingTimeline:
    """Sequential yearly training; year ``t`` starts from year ``t-1``'s weights.

    ``observer(year, phase, model)`` is called with phase ``"start"`` before
    and ``"end"`` after each year's training.
    """
    years = sorted(slices)
    if years != list(range(years[0], years[-1] + 1)):
        raise ValueError("years must be contiguous")
    if vocab is None:
        vocab = build_vocab(d for y in years for d in slices[y])
    model = init_model(vocab, cfg)
    ids, rows = concept_rows(model.vocab)
    snaps = np.empty((len(years), len(ids), cfg.dim), dtype=np.float32)
    for t, year in enumerate(years):
        if observer is not None:
            observer(year, "start", model)
        _, loss = train_year(model, slices[year], cfg, rng=year_rng(cfg.seed, year))
        logger.info("year %d: %d docs, mean loss %s", year, len(slices[year]), loss)
        if observer is not None:
            observer(year, "end", model)
        snaps[t] = model.W_in[rows]
    if first_seen is None:
        first_seen = {}
        for year in years:
            for doc in slices[year]:
                for tok in _tokens(doc):
                    if is_concept_token(tok):
                        first_seen.setdefault(concept_of(tok), year)
    return EmbeddingTimeline(years, ids, snaps, dict(first_seen),
                             np.zeros((len(years), len(ids)), dtype=bool))


def train_static(docs, cfg: TrainConfig, year: int, vocab=None) -> EmbeddingTimeline:
    """Single run over all ``docs``; stored as a one-year timeline keyed by ``year``."""
    docs = list(docs)
    if vocab is None:
        vocab = build_vocab(docs)
    model = init_model(vocab, cfg)
    train_year(model, docs, cfg, rng=year_rng(cfg.seed, year))
    ids, rows = concept_rows(model.vocab)
    snaps = model.W_in[rows][None].astype(np.float32)
    return EmbeddingTimeline([year], ids, snaps, {}, np.zeros((1, len(ids)), dtype=bool))


def backfill_timeline(timeline: EmbeddingTimeline, first_seen: dict[int, int],
                      concepts=None) -> EmbeddingTimeline:
    """Copy each concept's first-seen-year vector into all earlier years.

    ``concepts`` (optional) is the full concept id set; ids with no vector
    are listed in ``missing`` on the returned timeline.
    """
    vectors = timeline.vectors.copy()
    backfilled = timeline.backfilled.copy()
    start = timeline.years[0]
    for i, cid in enumerate(timeline.concept_ids):
        y0 = first_seen.get(int(cid))
        if y0 is None or y0 <= start or y0 not in timeline.years:
            continue
        t0 = timeline.years.index(y0)
        vectors[:t0, i] = vectors[t0, i]
        backfilled[:t0, i] = True
    missing = []
    if concepts is not None:
        missing = sorted(int(c) for c in concepts if int(c) not in timeline)
        if missing:
            logger.warning("%d concepts never occur and have no vector", len(missing))
    return EmbeddingTimeline(list(timeline.years), timeline.concept_ids.copy(), vectors,
                             dict(first_seen), backfilled, missing)


def predicted_file_size(n_concepts: int, dim: int, n_years: int) -> int:
    bitmap = (n_concepts * n_years + 7) // 8
    return _HEADER.size + 8 * n_concepts + bitmap + 4 * n_years * n_concepts * dim


def save_timeline(timeline: EmbeddingTimeline, path) -> None:
    n_c = len(timeline.concept_ids)
    n_y = len(timeline.years)
    years = timeline.years
    if years != list(range(years[0], years[0] + n_y)):
        raise ValueError("timeline years must be contiguous")
    fs = np.array([timeline.first_seen.get(int(c), 0) for c in timeline.concept_ids], dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n_c, timeline.dim, years[0], n_y))
        fh.write(timeline.concept_ids.astype("<u4").tobytes())
        fh.write(fs.tobytes())
        fh.write(np.packbits(timeline.backfilled.reshape(-1), bitorder="little").tobytes())
        fh.write(np.ascontiguousarray(timeline.vectors, dtype="<f4").tobytes())


class TimelineFormatError(ValueError):
    pass


def load_timeline(path) -> EmbeddingTimeline:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TimelineFormatError(f"{path}: truncated header")
    magic, version, n_c, dim, start, n_y = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TimelineFormatError(f"{path}: bad magic {magic!r}, not a timeline file")
    if version != FORMAT_VERSION:
        raise TimelineFormatError(f"{path}: unsupported format version {version}")
    if len(data) != predicted_file_size(n_c, dim, n_y):
        raise TimelineFormatError(
            f"{path}: size {len(data)} != expected {predicted_file_size(n_c, dim, n_y)} (truncated?)")
    off = _HEADER.size
    ids = np.frombuffer(data, "<u4", n_c, off).astype(np.int64)
    off += 4 * n_c
    fs = np.frombuffer(data, "<u4", n_c, off)
    off += 4 * n_c
    nbytes = (n_c * n_y + 7) // 8
    bits = np.unpackbits(np.frombuffer(data, np.uint8, nbytes, off), bitorder="little")
    backfilled = bits[: n_c * n_y].astype(bool).reshape(n_y, n_c)
    off += nbytes
    vectors = np.frombuffer(data, "<f4", n_y * n_c * dim, off).reshape(n_y, n_c, dim).astype(np.float32)
    first_seen = {int(c): int(y) for c, y in zip(ids, fs) if y}
    return EmbeddingTimeline(list(range(start, start + n_y)), ids, vectors, first_seen, backfilled)

