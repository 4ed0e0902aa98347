"""
Pipeline stages behind the command-line front-end.

Each stage reads the outputs of earlier stages from `<output_dir>/<stage>/`,
writes its own outputs next to a `resolved_config.yaml`, and records a
`manifest.json` with content hashes of its outputs and of the upstream
manifests it read.

Stages:
    ingest -> preprocess -> graph -> communities -> train -> evaluate -> importance
    synth writes an ingest-format dataset; matrix runs steps x variants x seeds;
    report renders evaluate and matrix results.
"""
import json
import os
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from functools import partial
from typing import Optional

import numpy as np
import pandas as pd

from src.autodiff.checkpoint import load_checkpoint, restore_parameters, save_checkpoint
from src.community.louvain import CommunityAssignment, louvain
from src.community.transfer_graph import build_transfer_graph
from src.config.config import config_hash, save_config
from src.config.config_definitions import RunConfig
from src.config.enums import Split, Task, Variant
from src.errors import ConfigError, MissingArtifactError
from src.evaluation.analysis import activity_distribution, collection_breakdown
from src.evaluation.experiment import (
    Cell, CellData, MetricReport, Workspace, build_model, fit_model, model_config_for, prepare_data,
    report_frame, run_baseline, score_model,
)
from src.evaluation.importance import importance_table
from src.evaluation.metrics import metrics_classification, metrics_regression
from src.evaluation.matrix import matrix_cells, run_matrix, summarize
from src.evaluation.report import read_reports, render_report
from src.evaluation.split import split_series
from src.graph.schema import FeatureSchema, fit_schema
from src.graph.snapshot import node_universe, build_snapshots
from src.graph.store import export_snapshots, load_snapshots, save_snapshots
from src.ingest.embeddings import write_embeddings
from src.ingest.market import load_market
from src.ingest.records import MarketData
from src.logger import Logger, setup_logger
from src.model.comet import CometModel, GraphInputs
from src.model.datasets import CollectionSample, TokenScaler
from src.model.training import predict_collection_samples, predict_token_samples
from src.preprocessor.pipeline import CleanMarket, clean_market, load_clean_market
from src.synthetic.generator import gen_synthetic
from src.utils.file_util import (
    create_stage_directory, get_stage_directory, manifest_hash, read_manifest, require_files,
    verify_outputs, verify_upstream, write_manifest,
)
from src.utils.saver import get_saver_strategy

RESOLVED_CONFIG: str = "resolved_config.yaml"

INGEST_FILES: tuple[str, ...] = ("transactions.csv", "rates.csv", "collections.csv", "properties.csv")
PREPROCESS_FILES: tuple[str, ...] = ("series.csv", "flags.csv", "ledger.csv", "rarity.csv")
GRAPH_FILES: tuple[str, ...] = ("snapshots.npz", "schema.json")
COMMUNITY_FILES: tuple[str, ...] = ("communities.csv",)
RUN_FILE: str = "run.json"

UPSTREAM: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "preprocess": ("ingest",),
    "graph": ("ingest", "preprocess"),
    "communities": ("ingest", "preprocess", "graph"),
    "train": ("ingest", "preprocess", "graph", "communities"),
    "evaluate": ("ingest", "preprocess", "graph", "communities", "train"),
    "importance": ("ingest", "preprocess", "graph", "communities", "train"),
    "matrix": ("ingest", "preprocess", "graph", "communities"),
    "report": (),
}


def _write_json(file: str, data: Mapping) -> str:
    with open(file, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return file


def _read_json(file: str) -> dict:
    with open(file, "r", encoding="utf-8") as f:
        return json.load(f)


def records_frame(market: MarketData) -> pd.DataFrame:
    """Canonical transactions table, one row per valid record in (timestamp, tx_id) order."""
    rows = [
        (r.tx_id, r.timestamp, r.kind.value, r.from_wallet, r.to_wallet, r.collection, r.token, r.price_eth)
        for r in market.records
    ]
    return pd.DataFrame(rows, columns=["tx_id", "timestamp", "kind", "from_wallet", "to_wallet", "collection", "token", "price_eth"])


def training_window(config: RunConfig, clean: CleanMarket, first_day: int) -> tuple[int, int]:
    """
    First market day through the earliest per-collection training end.

    Planned with the smallest configured step, which keeps the most collections
    and so the earliest end, valid for every step of the run.
    """
    step = min([config.model.step, *config.run.steps])
    plan = split_series(
        clean.series,
        (config.split.train, config.split.validation, config.split.test),
        config.model.history,
        step,
        config.split.min_extra_days,
    )
    return first_day, plan.training_window_end()


def read_clean_market(preprocess_dir: str, market: MarketData) -> CleanMarket:
    return load_clean_market(
        pd.read_csv(os.path.join(preprocess_dir, "series.csv"), dtype={"collection": str}),
        pd.read_csv(os.path.join(preprocess_dir, "flags.csv"), dtype=str),
        pd.read_csv(os.path.join(preprocess_dir, "ledger.csv"), dtype={"wallet": str, "collection": str}),
        market,
    )


def load_workspace(config: RunConfig) -> Workspace:
    """
    Read the ingest, preprocess, graph and communities outputs into a `Workspace`.

    Raises:
        MissingArtifactError: When an upstream output is missing or changed.
    """
    root = config.paths.output_dir
    dirs = {stage: get_stage_directory(root, stage) for stage in ("ingest", "preprocess", "graph", "communities")}
    for stage, names in (("ingest", INGEST_FILES), ("preprocess", PREPROCESS_FILES),
                         ("graph", GRAPH_FILES), ("communities", COMMUNITY_FILES)):
        require_files(dirs[stage], names, stage)
        verify_outputs(dirs[stage])

    market = load_market(dirs["ingest"], config.preprocess)
    clean = read_clean_market(dirs["preprocess"], market)
    raw, universe = load_snapshots(os.path.join(dirs["graph"], "snapshots.npz"))
    schema = FeatureSchema.from_dict(_read_json(os.path.join(dirs["graph"], "schema.json")))
    snapshots = {day: schema.apply(snapshot) for day, snapshot in raw.items()}
    communities = CommunityAssignment.read_csv(os.path.join(dirs["communities"], "communities.csv"))
    return Workspace(market, clean, schema, GraphInputs.build(snapshots, universe, communities))


@dataclass(frozen=True)
class TrainedRun:
    """Contents of `run.json`: the cell a train stage produced."""
    cell: Cell
    config_hash: str

    def to_dict(self) -> dict:
        cell = self.cell
        return {"task": cell.task.value, "step": cell.step, "variant": cell.variant.value,
                "seed": cell.seed, "config_hash": self.config_hash}

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainedRun":
        cell = Cell(Task(data["task"]), int(data["step"]), Variant(data["variant"]), int(data["seed"]))
        return cls(cell, str(data.get("config_hash", "")))


class PipelineStages:
    """
    Runs pipeline stages against one resolved configuration.

    Parameters:
        config (RunConfig): Resolved configuration, CLI overrides applied.
        logger (Logger | None): Logger to use, a default one when omitted.
    """

    def __init__(self, config: RunConfig, logger: Optional[Logger] = None) -> None:
        self.config = config
        self.logger: Logger = logger if logger is not None else setup_logger(config.logging.log_dir, config.logging.level)
        self.output_root = config.paths.output_dir

    def stage_dir(self, stage: str) -> str:
        return get_stage_directory(self.output_root, stage)

    def _require(self, stage: str, names: Iterable[str]) -> str:
        directory = self.stage_dir(stage)
        require_files(directory, names, stage)
        return directory

    def _upstream_hashes(self, stage: str) -> dict[str, str]:
        return {name: manifest_hash(self.stage_dir(name)) for name in UPSTREAM[stage]}

    def _begin(self, stage: str) -> str:
        self.logger.info(f"Stage '{stage}' started")
        return create_stage_directory(self.output_root, stage)

    def _finish(self, stage: str, stage_dir: str, outputs: Iterable[str], extra: Optional[Mapping] = None) -> list[str]:
        save_config(self.config, os.path.join(stage_dir, RESOLVED_CONFIG))
        outputs = sorted(set(outputs) | {RESOLVED_CONFIG})
        upstream = self._upstream_hashes(stage) if stage in UPSTREAM else {}
        write_manifest(stage_dir, stage, outputs, upstream, extra)
        self.logger.info(f"Stage '{stage}' finished, outputs in {stage_dir}: {', '.join(outputs)}")
        return outputs

    # stages

    def synth(self, out_dir: Optional[str] = None, seed: Optional[int] = None) -> list[str]:
        """Write a synthetic dataset into `out_dir`, the configured data directory by default."""
        out_dir = out_dir or self.config.paths.data_dir
        self.logger.info(f"Stage 'synth' started, writing {out_dir}")
        written = gen_synthetic(self.config.synthetic, out_dir, seed, self.config.preprocess)
        return self._finish("synth", out_dir, written)

    def ingest(self) -> list[str]:
        data_dir = self.config.paths.data_dir
        if not os.path.isdir(data_dir):
            raise MissingArtifactError(f"data directory not found: {data_dir}")
        market = load_market(data_dir, self.config.preprocess)
        stage_dir = self._begin("ingest")
        csv = get_saver_strategy("csv")

        csv.save(os.path.join(stage_dir, "transactions.csv"), records_frame(market))
        issues = pd.DataFrame(
            [(i.line_number, i.reason, i.line) for i in market.issues], columns=["line_number", "reason", "line"]
        )
        csv.save(os.path.join(stage_dir, "issues.csv"), issues)
        rates = market.rates
        csv.save(os.path.join(stage_dir, "rates.csv"), pd.DataFrame({
            "day": np.arange(rates.first_day, rates.last_day + 1), "eth_usd": rates.values,
        }))
        collections = [market.collections[c] for c in sorted(market.collections)]
        csv.save(os.path.join(stage_dir, "collections.csv"), pd.DataFrame(
            [(m.collection, m.total_supply) for m in collections], columns=["collection", "total_supply"]
        ))
        csv.save(os.path.join(stage_dir, "properties.csv"), pd.DataFrame(
            [(m.collection, token, key)
             for m in collections
             for token, keys in sorted(m.token_properties.items())
             for key in sorted(keys)],
            columns=["collection", "token", "property_key"],
        ))
        preprocess = self.config.preprocess
        write_embeddings(os.path.join(stage_dir, preprocess.visual_embeddings), market.visual)
        write_embeddings(os.path.join(stage_dir, preprocess.textual_embeddings), market.textual)

        if market.issues:
            self.logger.warning(f"{len(market.issues)} malformed transaction lines recorded in issues.csv")
        outputs = [*INGEST_FILES, "issues.csv", preprocess.visual_embeddings, preprocess.textual_embeddings]
        return self._finish("ingest", stage_dir, outputs, {
            "records": len(market.records), "issues": len(market.issues),
            "visual_source": market.visual.source.value, "textual_source": market.textual.source.value,
        })

    def _market(self) -> MarketData:
        ingest_dir = self._require("ingest", INGEST_FILES)
        return load_market(ingest_dir, self.config.preprocess)

    def _clean(self, market: MarketData) -> CleanMarket:
        return read_clean_market(self._require("preprocess", PREPROCESS_FILES), market)

    def preprocess(self) -> list[str]:
        market = self._market()
        clean = clean_market(market, self.config.preprocess)
        stage_dir = self._begin("preprocess")
        csv = get_saver_strategy("csv")
        csv.save(os.path.join(stage_dir, "series.csv"), clean.series_frame())
        csv.save(os.path.join(stage_dir, "flags.csv"), clean.flags_frame())
        csv.save(os.path.join(stage_dir, "ledger.csv"), clean.ledger.to_frame())
        csv.save(os.path.join(stage_dir, "rarity.csv"), clean.rarity_frame())
        warnings = len(clean.ledger.warnings)
        return self._finish("preprocess", stage_dir, PREPROCESS_FILES, {
            "collections": len(clean.series), "flagged_sales": len(clean.flags), "ledger_warnings": warnings,
        })

    def build_graph(self, export_days: Sequence[int] = ()) -> list[str]:
        market = self._market()
        clean = self._clean(market)
        window = training_window(self.config, clean, market.first_day)
        universe = node_universe(market.records, clean.series, window)
        self.logger.info(
            f"Training window {window[0]}..{window[1]}: {universe.n_wallets} wallets, "
            f"{universe.n_collections} collections"
        )
        snapshots = build_snapshots(market, clean, universe, (market.first_day, market.last_day))
        schema = fit_schema(range(window[0], window[1] + 1), snapshots, self.config.preprocess.embedding_dim)

        stage_dir = self._begin("graph")
        save_snapshots(os.path.join(stage_dir, "snapshots.npz"), snapshots, universe)
        _write_json(os.path.join(stage_dir, "schema.json"), schema.to_dict())
        exported = export_snapshots(stage_dir, export_days, snapshots, universe)
        missing = sorted(set(export_days) - set(snapshots))
        if missing:
            self.logger.warning(f"No snapshot for requested export days {missing}")
        outputs = [*GRAPH_FILES, *(os.path.basename(f) for f in exported)]
        return self._finish("graph", stage_dir, outputs, {"window": list(window), "days": len(snapshots)})

    def communities(self, seed: Optional[int] = None) -> list[str]:
        market = self._market()
        graph_dir = self._require("graph", GRAPH_FILES)
        window = tuple(read_manifest(graph_dir)["extra"]["window"])
        _, universe = load_snapshots(os.path.join(graph_dir, "snapshots.npz"))
        seed = self.config.run.seeds[0] if seed is None else seed

        graph = build_transfer_graph(market.records, window)
        assignment = louvain(graph, seed).with_wallets(universe.wallets)
        self.logger.info(f"{assignment.n_clusters} communities over {universe.n_wallets} wallets")
        stage_dir = self._begin("communities")
        assignment.write_csv(os.path.join(stage_dir, "communities.csv"))
        return self._finish("communities", stage_dir, COMMUNITY_FILES, {"seed": seed, "clusters": assignment.n_clusters})

    def train(self, cell: Cell) -> list[str]:
        """
        Train one cell. Graph variants write a checkpoint, baselines write their test predictions.
        """
        workspace = load_workspace(self.config)
        data = prepare_data(workspace, self.config, cell)
        stage_dir = self._begin("train")
        for stale in ("checkpoint.npz", "training_log.csv", "token_scaler.json", "predictions.csv"):
            path = os.path.join(stage_dir, stale)
            if os.path.exists(path):
                os.remove(path)

        run = TrainedRun(cell, config_hash(self.config))
        outputs = [RUN_FILE]
        if cell.variant.is_baseline:
            _, predictions = run_baseline(workspace, self.config, cell, data)
            frame = self._prediction_frame(cell.task, data, {cell.variant.value: predictions})
            get_saver_strategy("csv").save(os.path.join(stage_dir, "predictions.csv"), frame)
            outputs.append("predictions.csv")
        else:
            trained = fit_model(workspace, self.config, cell, data)
            optimizer = trained.collection.optimizer
            log = trained.collection.log.assign(phase="collection")
            if trained.token is not None:
                optimizer.m.update(trained.token.optimizer.m)
                optimizer.v.update(trained.token.optimizer.v)
                log = pd.concat([log, trained.token.log.assign(phase="token")], ignore_index=True)
                _write_json(os.path.join(stage_dir, "token_scaler.json"), trained.scaler.to_dict())
                outputs.append("token_scaler.json")
            save_checkpoint(os.path.join(stage_dir, "checkpoint.npz"), trained.model.parameters(), optimizer)
            get_saver_strategy("csv").save(os.path.join(stage_dir, "training_log.csv"), log)
            outputs += ["checkpoint.npz", "training_log.csv"]
        _write_json(os.path.join(stage_dir, RUN_FILE), run.to_dict())
        return self._finish("train", stage_dir, outputs, run.to_dict())

    @staticmethod
    def _prediction_frame(task: Task, data: CellData, predictions: Mapping[str, np.ndarray]) -> pd.DataFrame:
        if task is Task.COLLECTION:
            test = data.collection[Split.TEST]
            frame = pd.DataFrame({
                "collection": [s.collection for s in test],
                "day": [s.day for s in test],
                "label": [s.label for s in test],
            })
        else:
            test = data.token[Split.TEST]
            frame = pd.DataFrame({
                "collection": [s.collection for s in test],
                "token": [s.token for s in test],
                "day": [s.day for s in test],
                "target": [s.target for s in test],
            })
        for name, values in predictions.items():
            frame[name] = np.asarray(values, dtype=np.float64)
        return frame

    def _trained_run(self) -> tuple[str, TrainedRun]:
        train_dir = self._require("train", (RUN_FILE,))
        verify_upstream(train_dir, {name: self.stage_dir(name) for name in UPSTREAM["train"]})
        verify_outputs(train_dir)
        return train_dir, TrainedRun.from_dict(_read_json(os.path.join(train_dir, RUN_FILE)))

    def _restore_model(self, workspace: Workspace, train_dir: str, cell: Cell) -> CometModel:
        file = self.config.paths.checkpoint or os.path.join(train_dir, "checkpoint.npz")
        if not os.path.exists(file):
            raise MissingArtifactError(f"checkpoint not found: {file}")
        model = build_model(workspace, model_config_for(self.config, cell.step), cell.variant, cell.seed)
        restore_parameters(model.parameters(), load_checkpoint(file).params)
        return model

    def evaluate(self, compare: Sequence[Variant] = ()) -> list[str]:
        """
        Score the trained cell on the test split, plus any `compare` baselines.

        Raises:
            MissingArtifactError: When an upstream stage changed since training.
        """
        train_dir, run = self._trained_run()
        cell = run.cell
        workspace = load_workspace(self.config)
        data = prepare_data(workspace, self.config, cell)

        if cell.variant.is_baseline:
            require_files(train_dir, ("predictions.csv",), "train")
            stored = pd.read_csv(os.path.join(train_dir, "predictions.csv"), dtype={"collection": str, "token": str})
            report = MetricReport(cell, counts=data.counts(cell.task), config_hash=run.config_hash)
            if cell.task is Task.COLLECTION:
                report.acc, report.mcc = metrics_classification(stored[cell.variant.value], stored["label"])
            else:
                report.mae, report.mse = metrics_regression(stored[cell.variant.value], stored["target"])
            predictions = {cell.variant.value: stored[cell.variant.value].to_numpy()}
        else:
            model = self._restore_model(workspace, train_dir, cell)
            scaler = None
            if cell.task is Task.TOKEN:
                require_files(train_dir, ("token_scaler.json",), "train")
                scaler = TokenScaler.from_dict(_read_json(os.path.join(train_dir, "token_scaler.json")))
            report = score_model(workspace, self.config, cell, data, model, scaler)
            predictions = {cell.variant.value: self._model_predictions(workspace, cell, data, model, scaler)}

        reports = [report]
        for variant in compare:
            if not variant.is_baseline:
                raise ConfigError(f"--compare takes baselines only, got {variant.value}")
            other = Cell(cell.task, cell.step, variant, cell.seed)
            other_report, other_predictions = run_baseline(workspace, self.config, other, data)
            reports.append(other_report)
            predictions[variant.value] = other_predictions

        stage_dir = self._begin("evaluate")
        csv = get_saver_strategy("csv")
        csv.save(os.path.join(stage_dir, "report.csv"), report_frame(reports))
        csv.save(os.path.join(stage_dir, "predictions.csv"), self._prediction_frame(cell.task, data, predictions))
        for r in reports:
            self.logger.info(f"{r.cell.cell_id}: acc={r.acc:.4f} mcc={r.mcc:.4f} mae={r.mae:.4f} mse={r.mse:.4f}")
        return self._finish("evaluate", stage_dir, ["report.csv", "predictions.csv"], run.to_dict())

    def _model_predictions(
        self, workspace: Workspace, cell: Cell, data: CellData, model: CometModel, scaler: Optional[TokenScaler]
    ) -> np.ndarray:
        batch = self.config.model.batch
        if cell.task is Task.COLLECTION:
            return predict_collection_samples(model, workspace.inputs, data.collection[Split.TEST], batch)
        return predict_token_samples(model, workspace.inputs, data.token[Split.TEST], scaler, batch)

    def importance(self) -> list[str]:
        train_dir, run = self._trained_run()
        cell = run.cell
        if cell.variant.is_baseline:
            raise ConfigError(f"importance needs a graph model, trained variant is {cell.variant.value}")
        workspace = load_workspace(self.config)
        data = prepare_data(workspace, self.config, Cell(Task.COLLECTION, cell.step, cell.variant, cell.seed))
        model = self._restore_model(workspace, train_dir, cell)
        settings = self.config.importance
        table = importance_table(
            model, workspace.inputs, data.collection[Split.TEST], workspace.schema,
            settings.features, cell.seed, settings.repeats, self.config.model.batch,
        )
        stage_dir = self._begin("importance")
        get_saver_strategy("csv").save(os.path.join(stage_dir, "importance.csv"), table)
        return self._finish("importance", stage_dir, ["importance.csv"], run.to_dict())

    def matrix(self) -> list[str]:
        for stage, names in (("ingest", INGEST_FILES), ("preprocess", PREPROCESS_FILES),
                             ("graph", GRAPH_FILES), ("communities", COMMUNITY_FILES)):
            self._require(stage, names)
        cells = matrix_cells(self.config.run)
        self.logger.info(f"Running {len(cells)} cells with {self.config.run.workers} workers")
        report = run_matrix(partial(load_workspace, self.config), self.config, cells, self.config.run.workers)
        stage_dir = self._begin("matrix")
        csv = get_saver_strategy("csv")
        csv.save(os.path.join(stage_dir, "report.csv"), report)
        csv.save(os.path.join(stage_dir, "summary.csv"), summarize(report))
        return self._finish("matrix", stage_dir, ["report.csv", "summary.csv"], {"cells": len(cells)})

    def report(self) -> list[str]:
        """
        Render evaluate and matrix results with importance, per-collection and
        activity analyses when their inputs exist.

        Raises:
            MissingArtifactError: When neither evaluate nor matrix results exist.
        """
        report_files = {
            "matrix": os.path.join(self.stage_dir("matrix"), "report.csv"),
            "evaluate": os.path.join(self.stage_dir("evaluate"), "report.csv"),
        }
        report = read_reports(report_files)
        if report.empty:
            raise MissingArtifactError(f"no run results: {', '.join(report_files.values())}")

        importance_file = os.path.join(self.stage_dir("importance"), "importance.csv")
        importance = pd.read_csv(importance_file) if os.path.exists(importance_file) else None

        notes: list[str] = []
        breakdown = None
        activity = None
        ingest_dir = self.stage_dir("ingest")
        if all(os.path.exists(os.path.join(ingest_dir, name)) for name in INGEST_FILES):
            market = load_market(ingest_dir, self.config.preprocess)
            distribution = activity_distribution(market.records)
            activity = distribution.to_frame()
            notes += [
                f"Wallet activity power-law exponent: {distribution.wallet_exponent:.3f}",
                f"Token activity power-law exponent: {distribution.token_exponent:.3f}",
            ]
            breakdown = self._breakdown(market)

        stage_dir = self._begin("report")
        written = render_report(report, stage_dir, importance, breakdown, notes)
        if activity is not None:
            get_saver_strategy("csv").save(os.path.join(stage_dir, "activity.csv"), activity)
            written.append("activity.csv")
        return self._finish("report", stage_dir, written, {"rows": len(report)})

    def _breakdown(self, market: MarketData) -> Optional[pd.DataFrame]:
        file = os.path.join(self.stage_dir("evaluate"), "predictions.csv")
        if not os.path.exists(file):
            return None
        frame = pd.read_csv(file, dtype={"collection": str, "token": str})
        if "label" not in frame:
            return None
        samples = [
            CollectionSample(c, -1, int(d), int(y), Split.TEST)
            for c, d, y in frame[["collection", "day", "label"]].itertuples(index=False)
        ]
        names = [c for c in frame.columns if c not in ("collection", "day", "label")]
        return collection_breakdown(samples, {name: frame[name].to_numpy() for name in names}, market.records)
