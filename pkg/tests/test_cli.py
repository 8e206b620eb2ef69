import json
import shutil
import time
from pathlib import Path

import pytest

from dynlink.cli import main
from dynlink.config import ConfigError, config_hash, load_config
from dynlink.dataset import SplitSpec

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture()
def fixture_dir(tmp_path):
    d = tmp_path / "fixture"
    shutil.copytree(CONFIGS / "fixture", d)
    return d


@pytest.fixture(scope="module")
def fixture_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "fixture"
    shutil.copytree(CONFIGS / "fixture", d)
    start = time.perf_counter()
    code = main(["all", "--config", str(d / "config.json"), "--out", str(d / "run")])
    return code, time.perf_counter() - start, d / "run"


def test_all_on_fixture(fixture_run):
    code, elapsed, run = fixture_run
    assert code == 0
    assert elapsed < 60
    expected = [
        "ingest/records.jsonl", "ingest/papers_per_year.csv", "ingest/papers_per_year.svg",
        "match/docs.jsonl", "match/first_seen.csv", "embed/dynamic.dweb", "embed/static_train.dweb",
        "graph/edges.csv", "graph/node_train.dweb", "dataset/word-dynamic/train.csv",
        "dataset/knowledge-hand/test_features.csv", "train/word-dynamic/model.mlpc",
        "train/word-dynamic/history.csv", "eval/roc.csv", "eval/roc.svg", "eval/summary.csv",
        "eval/word-dynamic/calibration.csv", "eval/word-dynamic/confidence.csv",
        "cluster/scatter.csv", "cluster/scatter.svg", "cluster/clusters.csv",
        "trajectory/trajectories.csv", "trajectory/trajectories.svg",
    ]
    missing = [p for p in expected if not (run / p).is_file()]
    assert not missing


def test_manifests_trace_config(fixture_run):
    _, _, run = fixture_run
    cfg = load_config(run.parent / "config.json")
    for stage in ("ingest", "match", "embed", "graph", "dataset", "train", "eval", "cluster", "trajectory"):
        m = json.loads((run / stage / "manifest.json").read_text())
        assert m["config_hash"] == cfg.config_hash
        assert m["seed"] == 0 and m["deterministic"] is True
        produced = {str(p.relative_to(run)) for p in (run / stage).rglob("*")
                    if p.is_file() and p.name != "manifest.json"}
        assert set(m["outputs"]) == produced
    log = [json.loads(line) for line in (run / "run_log.jsonl").read_text().splitlines()]
    assert all("wall_time_s" in r for r in log)


def test_train_without_dataset(fixture_dir, capsys):
    code = main(["train", "--config", str(fixture_dir / "config.json"), "--out", str(fixture_dir / "empty")])
    assert code == 3
    assert "dataset" in capsys.readouterr().err


def test_schema_violation(fixture_dir, capsys):
    raw = json.loads((fixture_dir / "config.json").read_text())
    raw["embedding"]["dim"] = "wide"
    raw["bogus"] = 1
    (fixture_dir / "bad.json").write_text(json.dumps(raw))
    code = main(["ingest", "--config", str(fixture_dir / "bad.json")])
    err = capsys.readouterr().err
    assert code == 2
    assert "embedding.dim" in err and "bogus" in err


def test_missing_corpus_is_config_error(fixture_dir):
    assert main(["ingest", "--config", str(fixture_dir / "config.json"),
                 "--corpus", str(fixture_dir / "nope.jsonl")]) == 2


def test_env_override(fixture_dir, monkeypatch):
    monkeypatch.setenv("DYNLINK_OUT", str(fixture_dir / "elsewhere"))
    cfg = load_config(fixture_dir / "config.json")
    assert cfg.out_dir == fixture_dir / "elsewhere"


def test_flag_overrides_and_hash(fixture_dir):
    a = load_config(fixture_dir / "config.json")
    b = load_config(fixture_dir / "config.json", {"seed": 5, "paths.out_dir": "x"})
    c = load_config(fixture_dir / "config.json", {"paths.out_dir": "x"})
    assert b.seed == 5 and a.config_hash != b.config_hash
    assert a.config_hash == c.config_hash


def test_deterministic_forces_single_worker(fixture_dir):
    cfg = load_config(fixture_dir / "config.json", {"workers": 4, "deterministic": True})
    assert cfg.workers == 1


def test_shipped_full_config_split():
    cfg = load_config(CONFIGS / "quant-ph.json", check_paths=False)
    assert cfg.split == SplitSpec()
    assert (cfg.split.train_delta, cfg.split.train_lambda) == ((1994, 2017), (2018, 2020))
    assert (cfg.split.test_delta, cfg.split.test_lambda) == ((1994, 2020), (2021, 2023))
    raw = json.loads((CONFIGS / "quant-ph.json").read_text())
    assert raw["embedding"]["dim"] == 128 and raw["embedding"]["window"] == 10


def test_config_hash_ignores_out_dir():
    raw = json.loads((CONFIGS / "quant-ph.json").read_text())
    other = json.loads(json.dumps(raw))
    other["paths"]["out_dir"] = "/tmp/elsewhere"
    assert config_hash(raw) == config_hash(other)


def test_unreadable_config(tmp_path):
    (tmp_path / "c.json").write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")
    assert main(["ingest", "--config", str(tmp_path / "missing.json")]) == 2


def test_synth_writes_inputs(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--fixture"]) == 0
    assert (tmp_path / "s" / "corpus.jsonl").read_bytes() == (CONFIGS / "fixture" / "corpus.jsonl").read_bytes()
