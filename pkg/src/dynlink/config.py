"""Run configuration: JSON file -> validated dataclasses."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .dataset import SOURCES, SplitSpec
from .mlp import FitConfig
from .pipeline import NodeConfig
from .sgns import TrainConfig

SCHEMA_VERSION = 1
ENV_OVERRIDES = {"corpus": "DYNLINK_CORPUS", "lexicon": "DYNLINK_LEXICON", "out_dir": "DYNLINK_OUT"}

_year_pair = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}
_pos_int = {"type": "integer", "minimum": 1}
_pos_num = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "paths", "seed"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "paths": {
            "type": "object",
            "required": ["corpus", "lexicon", "out_dir"],
            "additionalProperties": False,
            "properties": {k: {"type": "string", "minLength": 1} for k in ("corpus", "lexicon", "out_dir")},
        },
        "corpus_years": _year_pair,
        "embedding": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "window": _pos_int, "dim": _pos_int, "negatives": _pos_int,
                "epochs": {"type": "integer", "minimum": 0},
                "learning_rate": _pos_num, "min_learning_rate": {"type": "number", "minimum": 0},
                "subsample_threshold": {"type": "number", "minimum": 0},
                "unigram_power": {"type": "number"},
            },
        },
        "node2vec": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"p": _pos_num, "q": _pos_num, "walk_len": _pos_int, "walks_per_node": _pos_int},
        },
        "split": {
            "type": "object",
            "additionalProperties": False,
            "required": ["train_delta", "train_lambda", "test_delta", "test_lambda"],
            "properties": {k: _year_pair for k in ("train_delta", "train_lambda", "test_delta", "test_lambda")},
        },
        "min_degree": {"type": "integer", "minimum": 0},
        "sources": {"type": "array", "items": {"enum": list(SOURCES)}, "minItems": 1, "uniqueItems": True},
        "classifier": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden": {"type": "array", "items": _pos_int, "minItems": 1},
                "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "learning_rate": _pos_num, "lr_decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "patience_lr": _pos_int, "patience_stop": _pos_int, "batch_size": {"type": "integer", "minimum": 2},
                "max_epochs": _pos_int, "head_relu": {"type": "boolean"},
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "cluster_year": {"type": "integer"}, "k": _pos_int, "m": _pos_int, "restarts": _pos_int,
                "bins": {"type": "integer", "minimum": 2},
                "trajectory_pairs": {"type": "array", "items": {"type": "array", "items": {"type": "integer"},
                                                                "minItems": 2, "maxItems": 2}},
                "trajectory_top": {"type": "integer", "minimum": 0},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "deterministic": {"type": "boolean"},
        "workers": _pos_int,
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class AnalysisConfig:
    cluster_year: int | None = None
    k: int = 9
    m: int = 3
    restarts: int = 10
    bins: int = 10
    trajectory_pairs: list = field(default_factory=list)
    trajectory_top: int = 3


@dataclass
class RunConfig:
    corpus: Path
    lexicon: Path
    out_dir: Path
    train: TrainConfig
    fit: FitConfig
    node: NodeConfig
    split: SplitSpec
    analysis: AnalysisConfig
    corpus_years: tuple[int, int] | None
    min_degree: int
    sources: tuple[str, ...]
    seed: int
    deterministic: bool
    workers: int
    raw: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    def stage_dir(self, stage: str) -> Path:
        return self.out_dir / stage


def config_hash(raw: dict) -> str:
    """Hash of the experiment definition; the output location is excluded."""
    raw = copy.deepcopy(raw)
    raw.get("paths", {}).pop("out_dir", None)
    return hashlib.sha256(json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _errors(raw) -> list[str]:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    msgs = []
    for err in sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path))):
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        msgs.append(f"{where}: {err.message}")
    return msgs


def from_dict(raw: dict, base_dir=".", overrides: dict | None = None, check_paths: bool = True) -> RunConfig:
    """Validate ``raw`` (after applying env and flag overrides) and build a :class:`RunConfig`.

    Relative paths resolve against ``base_dir``. ``overrides`` maps dotted
    keys (``"seed"``, ``"paths.out_dir"``...) to values.
    """
    raw = copy.deepcopy(raw)
    for key, env in ENV_OVERRIDES.items():
        if os.environ.get(env):
            raw.setdefault("paths", {})[key] = os.environ[env]
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    errs = _errors(raw)
    if errs:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errs))
    base = Path(base_dir)
    paths = {k: (base / v) if not Path(v).is_absolute() else Path(v) for k, v in raw["paths"].items()}
    if check_paths:
        for key in ("corpus", "lexicon"):
            if not paths[key].is_file():
                raise ConfigError(f"invalid config:\n  paths.{key}: file not found: {paths[key]}")
    seed = raw["seed"]
    deterministic = raw.get("deterministic", True)
    workers = 1 if deterministic else raw.get("workers", 1)
    emb = raw.get("embedding", {})
    train = TrainConfig(seed=seed, workers=workers, **emb)
    cls = dict(raw.get("classifier", {}))
    if "hidden" in cls:
        cls["hidden"] = tuple(cls["hidden"])
    fit = FitConfig(seed=seed, **cls)
    try:
        split = SplitSpec(**{k: tuple(v) for k, v in raw["split"].items()}) if "split" in raw else SplitSpec()
    except ValueError as exc:
        raise ConfigError(f"invalid config:\n  split: {exc}") from None
    analysis = AnalysisConfig(**raw.get("analysis", {}))
    years = tuple(raw["corpus_years"]) if "corpus_years" in raw else None
    return RunConfig(paths["corpus"], paths["lexicon"], paths["out_dir"], train, fit,
                     NodeConfig(**raw.get("node2vec", {})), split, analysis, years,
                     raw.get("min_degree", 1), tuple(raw.get("sources", SOURCES)), seed,
                     deterministic, workers, raw)


def load_config(path, overrides: dict | None = None, check_paths: bool = True) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return from_dict(raw, path.parent, overrides, check_paths)
