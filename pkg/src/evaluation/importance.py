"""
Permutation importance of snapshot features for the collection task.

A feature is shuffled across the evaluation set, i.e. across every (day, node)
row of the days the evaluation windows read, and the drop in accuracy is its
importance. Embedding blocks move as whole vectors between collections.
"""
from collections.abc import Iterable, Sequence
from dataclasses import replace

import numpy as np
import pandas as pd
from loguru import logger
from tqdm import tqdm

from src.errors import ConfigError
from src.evaluation.metrics import metrics_classification
from src.graph.schema import FeatureSchema
from src.model.comet import CometModel, GraphInputs
from src.model.datasets import CollectionSample
from src.model.training import predict_collection_samples

IMPORTANCE_COLUMNS: list[str] = ["feature", "score", "std"]

_BLOCK_ATTRIBUTES: dict[str, str] = {
    "wallet": "wallet_features",
    "collection_dynamic": "collection_dynamic",
    "collection_static": "collection_static",
}


def window_days(samples: Iterable[CollectionSample], history: int) -> list[int]:
    return sorted({s.day - k for s in samples for k in range(history + 1)})


def permute_feature(
    inputs: GraphInputs,
    days: Sequence[int],
    block: str,
    columns: Sequence[int],
    rng: np.random.Generator,
) -> GraphInputs:
    """Copy of `inputs` with `columns` of `block` shuffled over the rows of `days`."""
    attribute = _BLOCK_ATTRIBUTES[block]
    snapshots = dict(inputs.snapshots)
    columns = list(columns)

    if block == "collection_static":
        some_day = days[0]
        order = rng.permutation(snapshots[some_day].collection_static.shape[0])
        for day, snapshot in snapshots.items():
            static = snapshot.collection_static.copy()
            static[:, columns] = snapshot.collection_static[order][:, columns]
            snapshots[day] = snapshot.replace(collection_static=static)
        return replace(inputs, snapshots=snapshots)

    stacked = np.stack([getattr(snapshots[day], attribute) for day in days])
    n_days, n_rows, _ = stacked.shape
    flat = stacked.reshape(n_days * n_rows, -1)
    order = rng.permutation(n_days * n_rows)
    flat[:, columns] = flat[order][:, columns]
    stacked = flat.reshape(n_days, n_rows, -1)
    for i, day in enumerate(days):
        snapshots[day] = snapshots[day].replace(**{attribute: stacked[i]})
    return replace(inputs, snapshots=snapshots)


def _accuracy(model: CometModel, inputs: GraphInputs, samples: Sequence[CollectionSample], batch_size: int) -> float:
    probabilities = predict_collection_samples(model, inputs, samples, batch_size)
    acc, _ = metrics_classification(probabilities, [s.label for s in samples])
    return acc


def permutation_scores(
    model: CometModel,
    inputs: GraphInputs,
    samples: Sequence[CollectionSample],
    schema: FeatureSchema,
    feature: str,
    seed: int,
    repeats: int = 5,
    batch_size: int = 64,
) -> tuple[float, np.ndarray]:
    """
    Baseline accuracy and the accuracies of `repeats` shuffles of `feature`.

    Raises:
        ConfigError: When `feature` does not name a schema column.
    """
    try:
        block, columns = schema.columns(feature)
    except KeyError as e:
        raise ConfigError(f"unknown feature '{feature}'") from e
    days = window_days(samples, model.config.history)
    rng = np.random.default_rng(seed)
    baseline = _accuracy(model, inputs, samples, batch_size)
    permuted = np.asarray([
        _accuracy(model, permute_feature(inputs, days, block, columns, rng), samples, batch_size)
        for _ in range(repeats)
    ])
    return baseline, permuted


def permutation_importance(
    model: CometModel,
    inputs: GraphInputs,
    samples: Sequence[CollectionSample],
    schema: FeatureSchema,
    feature: str,
    seed: int,
    repeats: int = 5,
    batch_size: int = 64,
) -> float:
    """Baseline accuracy minus the mean accuracy over `repeats` shuffles."""
    baseline, permuted = permutation_scores(model, inputs, samples, schema, feature, seed, repeats, batch_size)
    return float(baseline - permuted.mean())


def importance_table(
    model: CometModel,
    inputs: GraphInputs,
    samples: Sequence[CollectionSample],
    schema: FeatureSchema,
    features: Sequence[str],
    seed: int,
    repeats: int = 5,
    batch_size: int = 64,
) -> pd.DataFrame:
    """Importance of every feature, one row each in `features` order."""
    rows = []
    for feature in tqdm(features, desc="importance"):
        baseline, permuted = permutation_scores(model, inputs, samples, schema, feature, seed, repeats, batch_size)
        drops = baseline - permuted
        rows.append({"feature": feature, "score": float(drops.mean()), "std": float(drops.std())})
        logger.info(f"{feature}: importance {drops.mean():.4f}")
    return pd.DataFrame(rows, columns=IMPORTANCE_COLUMNS)
