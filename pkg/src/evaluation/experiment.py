"""
One experiment cell: a (task, step, variant, seed) combination trained and
scored on the test split. Used by the train/evaluate stages and the run matrix.
"""
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger

from src.config.config import config_hash
from src.config.config_definitions import ModelConfig, RunConfig
from src.config.enums import Split, Task, Variant
from src.errors import ConfigError
from src.evaluation.metrics import metrics_classification, metrics_regression
from src.evaluation.split import SplitPlan, split_series
from src.graph.schema import FeatureSchema
from src.ingest.records import MarketData
from src.model.ablation import AblationFlags
from src.model.baselines import TokenForestBaseline, get_collection_baseline
from src.model.comet import CometModel, GraphInputs
from src.model.datasets import (
    CollectionSample, TokenSample, TokenScaler, build_collection_samples, build_token_samples,
)
from src.model.training import TrainResult, predict_collection_samples, predict_token_samples, train_collection, train_token
from src.preprocessor.pipeline import CleanMarket

REPORT_COLUMNS: list[str] = [
    "cell_id", "task", "step", "variant", "seed", "status", "acc", "mcc", "mae", "mse",
    "n_train", "n_validation", "n_test", "config_hash", "error",
]


@dataclass(frozen=True)
class Workspace:
    """Everything the cells of one run share, read once from the stage outputs."""
    market: MarketData
    clean: CleanMarket
    schema: FeatureSchema
    inputs: GraphInputs

    @property
    def static_dim(self) -> int:
        return next(iter(self.inputs.snapshots.values())).collection_static.shape[1]


@dataclass(frozen=True)
class Cell:
    task: Task
    step: int
    variant: Variant
    seed: int

    @property
    def cell_id(self) -> str:
        return f"{self.task.value}-N{self.step}-{self.variant.value}-s{self.seed}"


@dataclass
class MetricReport:
    """
    Test metrics of one cell. Classification metrics are NaN for the token task
    and regression metrics are NaN for the collection task.
    """
    cell: Cell
    acc: float = np.nan
    mcc: float = np.nan
    mae: float = np.nan
    mse: float = np.nan
    counts: Mapping[Split, int] = field(default_factory=dict)
    config_hash: str = ""
    status: str = "ok"
    error: str = ""

    def to_row(self) -> dict:
        return {
            "cell_id": self.cell.cell_id,
            "task": self.cell.task.value,
            "step": self.cell.step,
            "variant": self.cell.variant.value,
            "seed": self.cell.seed,
            "status": self.status,
            "acc": self.acc,
            "mcc": self.mcc,
            "mae": self.mae,
            "mse": self.mse,
            "n_train": self.counts.get(Split.TRAIN, 0),
            "n_validation": self.counts.get(Split.VALIDATION, 0),
            "n_test": self.counts.get(Split.TEST, 0),
            "config_hash": self.config_hash,
            "error": self.error,
        }


def report_frame(reports: Sequence[MetricReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in reports], columns=REPORT_COLUMNS)


def model_config_for(config: RunConfig, step: int) -> ModelConfig:
    return config.model.model_copy(update={"step": step})


@dataclass
class CellData:
    plan: SplitPlan
    collection: dict[Split, list[CollectionSample]]
    token: Optional[dict[Split, list[TokenSample]]] = None

    def counts(self, task: Task) -> dict[Split, int]:
        samples = self.collection if task is Task.COLLECTION else self.token
        return {split: len(items) for split, items in (samples or {}).items()}


def prepare_data(workspace: Workspace, config: RunConfig, cell: Cell) -> CellData:
    """Split plan and samples of `cell`; token samples only for the token task."""
    plan = split_series(
        workspace.clean.series,
        (config.split.train, config.split.validation, config.split.test),
        config.model.history,
        cell.step,
        config.split.min_extra_days,
    )
    universe = workspace.inputs.universe
    collection = build_collection_samples(workspace.clean.series, plan, universe)
    token = None
    if cell.task is Task.TOKEN:
        token = build_token_samples(workspace.market, workspace.clean, plan, universe, config.model.max_sale_length)
    return CellData(plan, collection, token)


@dataclass
class TrainedModel:
    """A trained graph model with its training logs and token scaling."""
    model: CometModel
    collection: TrainResult
    token: Optional[TrainResult] = None

    @property
    def scaler(self) -> Optional[TokenScaler]:
        return self.token.scaler if self.token is not None else None


def build_model(workspace: Workspace, config: ModelConfig, variant: Variant, seed: int) -> CometModel:
    return CometModel(workspace.inputs.universe, workspace.static_dim, config, AblationFlags.from_variant(variant), seed)


def fit_model(workspace: Workspace, config: RunConfig, cell: Cell, data: CellData) -> TrainedModel:
    """Train the collection backbone, then the token head for the token task."""
    model_config = model_config_for(config, cell.step)
    model = build_model(workspace, model_config, cell.variant, cell.seed)
    collection = train_collection(model, workspace.inputs, data.collection, model_config, cell.seed)
    token = None
    if cell.task is Task.TOKEN:
        token = train_token(model, workspace.inputs, data.token, model_config, cell.seed)
    return TrainedModel(model, collection, token)


def score_model(
    workspace: Workspace,
    config: RunConfig,
    cell: Cell,
    data: CellData,
    model: CometModel,
    scaler: Optional[TokenScaler] = None,
) -> MetricReport:
    """Test metrics of a trained graph model."""
    report = MetricReport(cell, counts=data.counts(cell.task), config_hash=config_hash(config))
    batch = config.model.batch
    if cell.task is Task.COLLECTION:
        test = data.collection[Split.TEST]
        probabilities = predict_collection_samples(model, workspace.inputs, test, batch)
        report.acc, report.mcc = metrics_classification(probabilities, [s.label for s in test])
    else:
        if scaler is None:
            raise ConfigError("token evaluation needs the token scaler of the trained head")
        test = data.token[Split.TEST]
        predictions = predict_token_samples(model, workspace.inputs, test, scaler, batch)
        report.mae, report.mse = metrics_regression(predictions, [s.target for s in test])
    return report


def run_baseline(workspace: Workspace, config: RunConfig, cell: Cell, data: CellData) -> tuple[MetricReport, np.ndarray]:
    """
    Fit a baseline on the training split and score it on the test split.

    Returns:
        tuple[MetricReport, np.ndarray]: The report and the test predictions.

    Raises:
        ConfigError: When the baseline has no model for the cell's task.
    """
    report = MetricReport(cell, counts=data.counts(cell.task), config_hash=config_hash(config))
    series = workspace.clean.series
    if cell.task is Task.COLLECTION:
        model_config = model_config_for(config, cell.step)
        baseline = get_collection_baseline(cell.variant, series, model_config, cell.seed).fit(data.collection)
        test = data.collection[Split.TEST]
        predictions = baseline.predict_proba(test)
        report.acc, report.mcc = metrics_classification(predictions, [s.label for s in test])
        return report, predictions
    if cell.variant is not Variant.RANDOM_FOREST:
        raise ConfigError(f"{cell.variant.value} has no token-level model")
    forest = TokenForestBaseline(series, cell.seed).fit(data.token)
    test = data.token[Split.TEST]
    predictions = forest.predict(test)
    report.mae, report.mse = metrics_regression(predictions, [s.target for s in test])
    return report, predictions


def run_cell(workspace: Workspace, config: RunConfig, cell: Cell) -> MetricReport:
    """Train and score one cell end to end."""
    logger.info(f"Running cell {cell.cell_id}")
    data = prepare_data(workspace, config, cell)
    if cell.variant.is_baseline:
        report, _ = run_baseline(workspace, config, cell, data)
        return report
    trained = fit_model(workspace, config, cell, data)
    return score_model(workspace, config, cell, data, trained.model, trained.scaler)
