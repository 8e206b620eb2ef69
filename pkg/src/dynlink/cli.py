"""Command-line entry point: staged pipeline over an output directory.

Each stage reads earlier stages' artifacts from ``out_dir``, writes its own
files plus ``<stage>/manifest.json``, and appends its wall time to
``out_dir/run_log.jsonl``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis, dataset as ds, evaluation as ev, graph as kg
from .concepts import TokenizedDoc, load_lexicon, replace_concepts, write_first_seen
from .config import ConfigError, RunConfig, load_config
from .corpus import corpus_stats, load_corpus, normalize_text
from .mlp import MlpModel, fit, load_model, predict_proba, save_model, write_history_csv
from .pipeline import dynamic_embeddings, node_embeddings, static_embeddings
from .sgns import load_timeline, save_timeline

logger = logging.getLogger("dynlink")

STAGES = ("ingest", "match", "embed", "graph", "dataset", "train", "eval", "cluster", "trajectory")
EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_RUNTIME = 0, 2, 3, 4


class DependencyError(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _require(cfg: RunConfig, stage: str, *names: str) -> list[Path]:
    paths = [cfg.stage_dir(stage) / n for n in names]
    missing = [p for p in paths if not p.exists()]
    if missing:
        raise DependencyError(f"missing {missing[0].relative_to(cfg.out_dir)}; run stage '{stage}' first")
    return paths


def _fresh_dir(cfg: RunConfig, stage: str) -> Path:
    d = cfg.stage_dir(stage)
    if d.exists():
        shutil.rmtree(d)
    d.mkdir(parents=True)
    return d


def _write_manifest(cfg: RunConfig, stage: str, inputs: list[Path], started: float) -> None:
    d = cfg.stage_dir(stage)
    outputs = sorted(p for p in d.rglob("*") if p.is_file() and p.name != "manifest.json")
    rel = lambda p: str(p.relative_to(cfg.out_dir)) if cfg.out_dir in p.parents else p.name
    manifest = {
        "stage": stage,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "deterministic": cfg.deterministic,
        "workers": cfg.workers,
        "versions": {"dynlink": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "inputs": {rel(p): _sha256(p) for p in sorted(inputs)},
        "outputs": {rel(p): _sha256(p) for p in outputs},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    with open(cfg.out_dir / "run_log.jsonl", "a") as fh:
        fh.write(json.dumps({"stage": stage, "config_hash": cfg.config_hash,
                             "wall_time_s": round(time.time() - started, 3)}) + "\n")


def _read_docs(path: Path) -> list[TokenizedDoc]:
    docs = []
    with open(path) as fh:
        for line in fh:
            obj = json.loads(line)
            docs.append(TokenizedDoc(obj["tokens"], [tuple(p) for p in obj["concepts"]], obj["year"]))
    return docs


def _display(cfg: RunConfig) -> dict[int, str]:
    path = cfg.stage_dir("match") / "concepts.csv"
    with open(path, newline="") as fh:
        return {int(r["concept_id"]): r["concept"] for r in csv.DictReader(fh)}


def _concept_count(cfg: RunConfig) -> int:
    return len(_display(cfg))


def _year_range(cfg: RunConfig, docs) -> tuple[int, int]:
    if cfg.corpus_years:
        return cfg.corpus_years
    return min(d.year for d in docs), max(d.year for d in docs)


# -- stages ------------------------------------------------------------------

def stage_ingest(cfg: RunConfig) -> list[Path]:
    out = _fresh_dir(cfg, "ingest")
    result = load_corpus(cfg.corpus, cfg.corpus_years)
    if not result.records:
        raise RuntimeError(f"no usable records in {cfg.corpus}")
    with open(out / "records.jsonl", "w") as fh:
        for r in result.records:
            fh.write(json.dumps({"id": r.id, "year": r.year, "month": r.month,
                                 "tokens": normalize_text(r.text)}) + "\n")
    stats = corpus_stats(result.records, cfg.corpus_years)
    stats.to_csv(out / "corpus_stats.csv")
    (out / "summary.json").write_text(json.dumps({"records": len(result.records), "skipped": result.skipped},
                                                 sort_keys=True) + "\n")
    analysis.emit_papers_per_year(stats, out)
    return [cfg.corpus]


def stage_match(cfg: RunConfig) -> list[Path]:
    (records,) = _require(cfg, "ingest", "records.jsonl")
    out = _fresh_dir(cfg, "match")
    lexicon = load_lexicon(cfg.lexicon)
    docs = []
    with open(records) as fh, open(out / "docs.jsonl", "w") as fo:
        for line in fh:
            obj = json.loads(line)
            doc = replace_concepts(obj["tokens"], lexicon, obj["year"])
            docs.append(doc)
            fo.write(json.dumps({"id": obj["id"], "year": doc.year, "tokens": doc.tokens,
                                 "concepts": doc.concept_positions}) + "\n")
    from .concepts import first_occurrences
    write_first_seen(first_occurrences(docs), out / "first_seen.csv")
    with open(out / "concepts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["concept_id", "concept"])
        for cid in range(len(lexicon)):
            w.writerow([cid, lexicon.display[cid]])
    return [records, cfg.lexicon]


def stage_embed(cfg: RunConfig) -> list[Path]:
    (docs_path,) = _require(cfg, "match", "docs.jsonl")
    out = _fresh_dir(cfg, "embed")
    docs = _read_docs(docs_path)
    years = _year_range(cfg, docs)
    n_concepts = _concept_count(cfg)
    if "word-dynamic" in cfg.sources:
        timeline = dynamic_embeddings(docs, (cfg.split.train_delta[0], years[1]), cfg.train,
                                      concepts=range(n_concepts))
        save_timeline(timeline, out / "dynamic.dweb")
        if timeline.missing:
            (out / "missing_concepts.txt").write_text("".join(f"{c}\n" for c in timeline.missing))
    if {"word-static", "word-hand"} & set(cfg.sources):
        save_timeline(static_embeddings(docs, cfg.split.train_delta, cfg.train), out / "static_train.dweb")
        save_timeline(static_embeddings(docs, cfg.split.test_delta, cfg.train), out / "static_test.dweb")
    return [docs_path]


def _cumulative(cfg: RunConfig) -> dict[int, kg.CoocGraph]:
    (edges,) = _require(cfg, "graph", "edges.csv")
    meta = json.loads((cfg.stage_dir("graph") / "years.json").read_text())
    return kg.accumulate(kg.read_edges_csv(edges, range(meta["start"], meta["end"] + 1)))


def stage_graph(cfg: RunConfig) -> list[Path]:
    (docs_path,) = _require(cfg, "match", "docs.jsonl")
    out = _fresh_dir(cfg, "graph")
    docs = _read_docs(docs_path)
    years = _year_range(cfg, docs)
    start = min(years[0], cfg.split.train_delta[0])
    end = max(years[1], cfg.split.test_lambda[1])
    increments = kg.yearly_increments(docs, range(start, end + 1))
    kg.write_edges_csv(increments, out / "edges.csv")
    (out / "years.json").write_text(json.dumps({"start": start, "end": end}) + "\n")
    if "knowledge-node" in cfg.sources:
        cumulative = kg.accumulate(increments)
        for name, delta in (("train", cfg.split.train_delta), ("test", cfg.split.test_delta)):
            tl = node_embeddings(cumulative[delta[1]], cfg.train, cfg.node, cfg.seed)
            save_timeline(tl, out / f"node_{name}.dweb")
    return [docs_path]


def _inputs(cfg: RunConfig, which: str, cumulative) -> ds.FeatureInputs:
    delta = cfg.split.train_delta if which == "train" else cfg.split.test_delta
    inp = ds.FeatureInputs(delta[1], graphs=cumulative)
    if "word-dynamic" in cfg.sources:
        inp.timeline = load_timeline(_require(cfg, "embed", "dynamic.dweb")[0])
    if {"word-static", "word-hand"} & set(cfg.sources):
        inp.static = load_timeline(_require(cfg, "embed", f"static_{which}.dweb")[0])
    if "knowledge-node" in cfg.sources:
        inp.node = load_timeline(_require(cfg, "graph", f"node_{which}.dweb")[0])
    return inp


def _write_pairs(samples, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["c1", "c2", "label"])
        for s in samples:
            w.writerow([s.c1, s.c2, s.label])


def stage_dataset(cfg: RunConfig) -> list[Path]:
    (docs_path,) = _require(cfg, "match", "docs.jsonl")
    cumulative = _cumulative(cfg)
    inputs = [docs_path, cfg.stage_dir("graph") / "edges.csv"]
    train_in = _inputs(cfg, "train", cumulative)
    test_in = _inputs(cfg, "test", cumulative)
    out = _fresh_dir(cfg, "dataset")
    docs = _read_docs(docs_path)
    from .pipeline import candidate_samples
    labelled, test = candidate_samples(docs, cfg.split, range(_concept_count(cfg)), cfg.min_degree,
                                       cfg.seed, cumulative)
    train, val = ds.train_val_split(labelled, 0.8, cfg.seed)
    _write_pairs(train, out / "pairs_train.csv")
    _write_pairs(val, out / "pairs_val.csv")
    _write_pairs(test, out / "pairs_test.csv")
    for source in cfg.sources:
        d = out / source
        d.mkdir()
        parts = {
            "train": ds.assemble_feature_vectors(train, source, train_in, augment=True),
            "val": ds.assemble_feature_vectors(val, source, train_in),
            "test": ds.assemble_feature_vectors(test, source, test_in),
        }
        for name, samples in parts.items():
            ds.write_dataset(samples, d / f"{name}.csv", d / f"{name}.npy")
            if source == "knowledge-hand":
                kg.write_features_csv([(s.c1, s.c2, s.feature_vec) for s in samples if not s.swapped],
                                      d / f"{name}_features.csv")
    for stage, name in (("embed", "dynamic.dweb"), ("embed", "static_train.dweb"), ("embed", "static_test.dweb"),
                        ("graph", "node_train.dweb"), ("graph", "node_test.dweb")):
        p = cfg.stage_dir(stage) / name
        if p.exists():
            inputs.append(p)
    return inputs


def stage_train(cfg: RunConfig) -> list[Path]:
    inputs = []
    for source in cfg.sources:
        inputs += _require(cfg, "dataset", f"{source}/train.csv", f"{source}/train.npy",
                           f"{source}/val.csv", f"{source}/val.npy")
    out = _fresh_dir(cfg, "train")
    for source in cfg.sources:
        d = cfg.stage_dir("dataset") / source
        X, y = ds.to_arrays(ds.read_dataset(d / "train.csv", d / "train.npy"))
        Xv, yv = ds.to_arrays(ds.read_dataset(d / "val.csv", d / "val.npy"))
        f = cfg.fit
        model = MlpModel(X.shape[1], f.hidden, f.dropout, f.head_relu, seed=cfg.seed,
                         bn_momentum=f.bn_momentum, bn_eps=f.bn_eps, prelu_init=f.prelu_init)
        model, history = fit(model, (X, y), (Xv, yv), f)
        (out / source).mkdir()
        save_model(model, out / source / "model.mlpc")
        write_history_csv(history, out / source / "history.csv")
    return inputs


def stage_eval(cfg: RunConfig) -> list[Path]:
    inputs = []
    for source in cfg.sources:
        inputs += _require(cfg, "train", f"{source}/model.mlpc")
        inputs += _require(cfg, "dataset", f"{source}/test.csv", f"{source}/test.npy")
    out = _fresh_dir(cfg, "eval")
    curves = {}
    rows = []
    for source in cfg.sources:
        model = load_model(cfg.stage_dir("train") / source / "model.mlpc")
        d = cfg.stage_dir("dataset") / source
        samples = ds.read_dataset(d / "test.csv", d / "test.npy")
        X, y = ds.to_arrays(samples)
        scores = predict_proba(model, X)
        sd = out / source
        sd.mkdir()
        with open(sd / "scores.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["c1", "c2", "label", "probability"])
            for s, p in zip(samples, scores):
                w.writerow([s.c1, s.c2, s.label, repr(float(p))])
        roc = ev.roc_auc(scores, y)
        cal = ev.calibration_table(scores, y, cfg.analysis.bins)
        conf = ev.confidence_filter_curve(scores, y)
        ev.write_roc_csv(roc, sd / "roc.csv")
        ev.write_calibration_csv(cal, sd / "calibration.csv")
        ev.write_confidence_csv(conf, sd / "confidence.csv")
        analysis.emit_plots({"calibration": cal, "confidence": conf}, sd)
        curves[source] = roc
        rows.append([source, repr(roc.auc), len(y)])
    analysis.emit_roc(curves, out)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "auc", "n_test"])
        w.writerows(rows)
    return inputs


def stage_cluster(cfg: RunConfig) -> list[Path]:
    (tl_path,) = _require(cfg, "embed", "dynamic.dweb")
    (docs_path,) = _require(cfg, "match", "docs.jsonl")
    out = _fresh_dir(cfg, "cluster")
    timeline = load_timeline(tl_path)
    year = cfg.analysis.cluster_year or cfg.split.train_delta[1]
    freq: dict[int, int] = {}
    for doc in _read_docs(docs_path):
        if doc.year == year:
            for _, cid in doc.concept_positions:
                freq[cid] = freq.get(cid, 0) + 1
    points = timeline.snapshot(year).astype(np.float64)
    proj = analysis.pca_project(points, seed=cfg.seed)
    k = min(cfg.analysis.k, len(np.unique(proj.points, axis=0)))
    clusters = analysis.kmeans_cluster(proj.points, k, cfg.seed, cfg.analysis.restarts)
    report = analysis.cluster_report(proj.points, clusters, timeline.concept_ids, freq, cfg.analysis.m)
    analysis.emit_plots({"projection": proj, "clusters": clusters, "concept_ids": timeline.concept_ids,
                         "report": report}, out, _display(cfg))
    (out / "projection.json").write_text(json.dumps({
        "method": proj.method, "year": year, "k": k,
        "explained_variance": [repr(v) for v in proj.explained_variance],
        "note": "principal-axis projection used in place of a nonlinear manifold embedding",
    }, indent=2, sort_keys=True) + "\n")
    return [tl_path, docs_path]


def stage_trajectory(cfg: RunConfig) -> list[Path]:
    if "word-dynamic" not in cfg.sources:
        raise DependencyError("trajectory needs the word-dynamic source")
    tl_path, = _require(cfg, "embed", "dynamic.dweb")
    model_path, = _require(cfg, "train", "word-dynamic/model.mlpc")
    (docs_path,) = _require(cfg, "match", "docs.jsonl")
    inputs = [tl_path, model_path, docs_path]
    pairs = [tuple(p) for p in cfg.analysis.trajectory_pairs]
    if not pairs and cfg.analysis.trajectory_top:
        (scores_path,) = _require(cfg, "eval", "word-dynamic/scores.csv")
        inputs.append(scores_path)
        with open(scores_path, newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if r["label"] == "1"]
        rows.sort(key=lambda r: (-float(r["probability"]), int(r["c1"]), int(r["c2"])))
        pairs = [(int(r["c1"]), int(r["c2"])) for r in rows[: cfg.analysis.trajectory_top]]
    out = _fresh_dir(cfg, "trajectory")
    timeline = load_timeline(tl_path)
    model = load_model(model_path)
    docs = _read_docs(docs_path)
    trajs = [ev.prediction_trajectory(model, timeline, p, timeline.years, docs) for p in pairs]
    analysis.emit_trajectories(trajs, out, _display(cfg))
    return inputs


STAGE_FUNCS = {
    "ingest": stage_ingest, "match": stage_match, "embed": stage_embed, "graph": stage_graph,
    "dataset": stage_dataset, "train": stage_train, "eval": stage_eval, "cluster": stage_cluster,
    "trajectory": stage_trajectory,
}


def run_pipeline(cfg: RunConfig, stage: str) -> int:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    stages = STAGES if stage == "all" else (stage,)
    for name in stages:
        started = time.time()
        logger.info("stage %s", name)
        inputs = STAGE_FUNCS[name](cfg)
        _write_manifest(cfg, name, inputs, started)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import fixture, generate
    corpus = fixture(args.seed) if args.fixture else generate(args.seed)
    out = Path(args.out)
    corpus_path, lexicon_path = corpus.write(out)
    cfg = default_config("corpus.jsonl", "lexicon.txt", "run", corpus.split, seed=args.seed)
    cfg["corpus_years"] = list(corpus.years)
    cfg["embedding"].update({"dim": 32, "window": 5})
    cfg["analysis"]["cluster_year"] = corpus.split.train_delta[1]
    (out / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    print(f"wrote {corpus_path}, {lexicon_path} and {out / 'config.json'}")
    return EXIT_OK


def default_config(corpus: str, lexicon: str, out_dir: str, split: ds.SplitSpec | None = None, seed: int = 0) -> dict:
    split = split or ds.SplitSpec()
    return {
        "schema_version": 1,
        "paths": {"corpus": corpus, "lexicon": lexicon, "out_dir": out_dir},
        "embedding": {"window": 10, "dim": 128, "negatives": 5, "epochs": 5, "learning_rate": 0.025,
                      "min_learning_rate": 0.0001, "subsample_threshold": 0.001, "unigram_power": 0.75},
        "node2vec": {"p": 1.0, "q": 1.0, "walk_len": 80, "walks_per_node": 10},
        "split": {"train_delta": list(split.train_delta), "train_lambda": list(split.train_lambda),
                  "test_delta": list(split.test_delta), "test_lambda": list(split.test_lambda)},
        "min_degree": 1,
        "sources": list(ds.SOURCES),
        "classifier": {"hidden": [256, 64], "dropout": 0.3, "learning_rate": 0.001, "lr_decay": 0.5,
                       "patience_lr": 5, "patience_stop": 15, "batch_size": 256, "max_epochs": 200,
                       "head_relu": False},
        "analysis": {"k": 9, "m": 3, "restarts": 10, "bins": 10, "trajectory_pairs": [], "trajectory_top": 3},
        "seed": seed,
        "deterministic": True,
        "workers": 1,
    }


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dynlink", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "all"):
        sp = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage")
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help="override paths.out_dir")
        sp.add_argument("--corpus", help="override paths.corpus")
        sp.add_argument("--lexicon", help="override paths.lexicon")
        sp.add_argument("--seed", type=int, help="override seed")
        sp.add_argument("--workers", type=int, help="override workers (ignored with --deterministic)")
        sp.add_argument("--deterministic", action="store_true", default=None,
                        help="single worker, seeded, byte-reproducible artifacts")
    sp = sub.add_parser("synth", help="write a synthetic corpus, lexicon and config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--fixture", action="store_true", help="small 200-abstract variant")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "synth":
        return cmd_synth(args)
    overrides = {"paths.out_dir": args.out, "paths.corpus": args.corpus, "paths.lexicon": args.lexicon,
                 "seed": args.seed, "workers": args.workers, "deterministic": args.deterministic}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run_pipeline(cfg, args.command)
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure exit code
        logger.debug("stage failed", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
