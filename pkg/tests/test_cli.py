import json
import os

import pandas as pd
import pytest
from click.testing import CliRunner

from src.cli.__main__ import cli, parse_overrides
from src.config.config import OUTPUT_ROOT_ENV
from src.errors import ConfigError
from src.utils.file_util import MANIFEST_FILE

SMALL_MARKET = [
    "synthetic.n_collections=3", "synthetic.n_wallets=60", "synthetic.n_days=60",
    "synthetic.tokens_per_collection=25", "synthetic.properties_per_collection=4",
    "synthetic.smart_wallets=5", "synthetic.seed=11",
]
SMALL_MODEL = [
    "model.hidden_dim=8", "model.gnn_layers=1", "model.max_epochs=2", "model.history=3",
    "model.batch=16", "run.steps=[1]", "run.seeds=[0]", "split.min_extra_days=2",
]


@pytest.fixture(autouse=True)
def no_output_root(monkeypatch):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)


def run(root, *args, overrides=()):
    options = ["--data-dir", str(root / "data"), "--output-dir", str(root / "out"),
               "--set", f"logging.log_dir={root / 'logs'}"]
    for override in overrides:
        options += ["--set", override]
    return CliRunner().invoke(cli, [*options, *args])


def read_manifest(root, stage):
    with open(root / "out" / stage / MANIFEST_FILE, "r", encoding="utf-8") as f:
        return json.load(f)


def test_parse_overrides():
    assert parse_overrides(("model.lr=0.01", "run.steps=[1, 3]", "paths.checkpoint=a.npz")) == {
        "model": {"lr": 0.01}, "run": {"steps": [1, 3]}, "paths": {"checkpoint": "a.npz"},
    }
    with pytest.raises(ConfigError):
        parse_overrides(("lr=0.01",))
    with pytest.raises(ConfigError):
        parse_overrides(("model.lr",))


def test_missing_upstream_output_exits_with_code_3(tmp_path):
    result = run(tmp_path, "preprocess")
    assert result.exit_code == 3
    assert "error=missing_artifact" in result.output

    result = run(tmp_path, "evaluate")
    assert result.exit_code == 3


def test_bad_config_exits_with_code_2(tmp_path):
    result = run(tmp_path, "ingest", overrides=["nodot=1"])
    assert result.exit_code == 2
    assert "error=config_error" in result.output

    result = run(tmp_path, "ingest", overrides=["model.hidden_dim=-1"])
    assert result.exit_code == 2
    assert "model.hidden_dim" in result.output

    result = run(tmp_path, "train", "--step", "0")
    assert result.exit_code == 2


def test_missing_data_dir_is_a_missing_artifact(tmp_path):
    result = run(tmp_path, "ingest")
    assert result.exit_code == 3
    assert "data directory not found" in result.output


@pytest.fixture(scope="module")
def pipeline_root(tmp_path_factory):
    """A small synthetic market taken through ingest, preprocess, build-graph and communities."""
    root = tmp_path_factory.mktemp("pipeline")
    for args in (["synth"], ["ingest"], ["preprocess"], ["build-graph", "--export-days", "18658"], ["communities"]):
        result = run(root, *args, overrides=SMALL_MARKET + SMALL_MODEL)
        assert result.exit_code == 0, result.output
    return root


def test_stage_outputs_and_manifests(pipeline_root):
    assert (pipeline_root / "data" / "truth.json").exists()
    for stage, names in {
        "ingest": ["transactions.csv", "issues.csv"],
        "preprocess": ["series.csv", "flags.csv", "ledger.csv", "rarity.csv"],
        "graph": ["snapshots.npz", "schema.json", "snapshot_18658.csv"],
        "communities": ["communities.csv"],
    }.items():
        manifest = read_manifest(pipeline_root, stage)
        assert manifest["stage"] == stage
        for name in names:
            assert name in manifest["outputs"], (stage, name)
            assert (pipeline_root / "out" / stage / name).exists()
    assert set(read_manifest(pipeline_root, "graph")["upstream"]) >= {"ingest", "preprocess"}


def test_preprocess_is_idempotent(pipeline_root):
    before = read_manifest(pipeline_root, "preprocess")
    result = run(pipeline_root, "preprocess", overrides=SMALL_MARKET + SMALL_MODEL)
    assert result.exit_code == 0, result.output
    assert read_manifest(pipeline_root, "preprocess") == before


@pytest.mark.slow
def test_train_evaluate_report(pipeline_root):
    overrides = SMALL_MARKET + SMALL_MODEL
    result = run(pipeline_root, "train", "--ablate", "wo-TE", overrides=overrides)
    assert result.exit_code == 0, result.output
    train_dir = pipeline_root / "out" / "train"
    assert (train_dir / "checkpoint.npz").exists()
    log = pd.read_csv(train_dir / "training_log.csv")
    assert set(log["phase"]) == {"collection"}

    result = run(pipeline_root, "evaluate", "--compare", "majority", overrides=overrides)
    assert result.exit_code == 0, result.output
    report = pd.read_csv(pipeline_root / "out" / "evaluate" / "report.csv")
    assert report["variant"].tolist() == ["wo-TE", "majority"]
    assert report["cell_id"].iloc[0] == "collection-N1-wo-TE-s0"
    assert report["acc"].between(0.0, 1.0).all()
    assert report["mcc"].between(-1.0, 1.0).all()

    result = run(pipeline_root, "evaluate", "--compare", "full", overrides=overrides)
    assert result.exit_code == 2

    result = run(pipeline_root, "report", overrides=overrides)
    assert result.exit_code == 0, result.output
    report_dir = pipeline_root / "out" / "report"
    text = (report_dir / "report.md").read_text()
    assert "wo-TE" in text
    assert "power-law exponent" in text
    assert (report_dir / "activity.csv").exists()
    assert (report_dir / "breakdown.csv").exists()


@pytest.mark.slow
def test_baseline_train_writes_predictions(pipeline_root):
    overrides = SMALL_MARKET + SMALL_MODEL
    result = run(pipeline_root, "train", "--ablate", "logreg", "--seed", "1", overrides=overrides)
    assert result.exit_code == 0, result.output
    train_dir = pipeline_root / "out" / "train"
    assert (train_dir / "predictions.csv").exists()
    assert not (train_dir / "checkpoint.npz").exists()

    result = run(pipeline_root, "evaluate", overrides=overrides)
    assert result.exit_code == 0, result.output
    report = pd.read_csv(pipeline_root / "out" / "evaluate" / "report.csv")
    assert report["cell_id"].tolist() == ["collection-N1-logreg-s1"]
    assert os.path.exists(pipeline_root / "out" / "evaluate" / "predictions.csv")


@pytest.mark.slow
def test_repeated_runs_write_identical_results(pipeline_root):
    overrides = SMALL_MARKET + SMALL_MODEL
    names = ("train/training_log.csv", "evaluate/report.csv", "evaluate/predictions.csv", "report/report.md")
    runs = []
    for _ in range(2):
        for args in (["train", "--ablate", "full"], ["evaluate", "--compare", "majority"], ["report"]):
            result = run(pipeline_root, *args, overrides=overrides)
            assert result.exit_code == 0, result.output
        runs.append({name: (pipeline_root / "out" / name).read_bytes() for name in names})
    assert runs[0] == runs[1]
