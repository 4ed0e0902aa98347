"""
Hierarchical training.

The collection task trains the whole backbone with BCE + L2. The token task then
freezes it: window embeddings are computed once without gradients and only the
sale encoder, global-feature MLP and token predictor are optimised with MSE + L2.
Both loops use Adam, early stopping on validation loss and restore the best epoch.
"""
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import pandas as pd
from loguru import logger
from tqdm import tqdm

from src.autodiff.functional import bce_with_logits, l2_penalty, mse
from src.autodiff.optim import Adam
from src.autodiff.tensor import Tensor, no_grad
from src.config.config_definitions import ModelConfig
from src.config.enums import Split
from src.errors import DataValidationError
from src.evaluation.metrics import binary_cross_entropy, metrics_classification
from src.model.comet import CometModel, GraphInputs
from src.model.datasets import (
    CollectionSample, TokenSample, TokenScaler, collection_batches, token_batch, token_batches,
)
from src.model.layers import EVAL, ForwardContext

LOG_COLUMNS: list[str] = ["epoch", "train_loss", "val_loss", "val_acc", "val_mcc"]


@dataclass
class TrainResult:
    """
    Attributes:
        optimizer (Adam): Optimizer state at the best epoch.
        log (pd.DataFrame): One row per epoch with LOG_COLUMNS.
        best_epoch (int): Epoch whose parameters were restored.
        scaler (TokenScaler | None): Token feature scaling, token task only.
    """
    optimizer: Adam
    log: pd.DataFrame
    best_epoch: int
    scaler: Optional[TokenScaler] = None
    extra: dict[str, Any] = field(default_factory=dict)


def fit(
    parameters: Mapping[str, Tensor],
    make_batches: Callable[[np.random.Generator], Sequence[Any]],
    batch_loss: Callable[[Any, ForwardContext], Tensor],
    validate: Callable[[], dict[str, float]],
    config: ModelConfig,
    seed: int,
    desc: str,
) -> tuple[Adam, pd.DataFrame, int]:
    """
    Generic Adam loop with early stopping on `validate()["val_loss"]`.

    The best parameters and optimizer moments are restored before returning.
    """
    rng = np.random.default_rng(seed)
    optimizer = Adam(parameters, lr=config.lr)
    best_loss = np.inf
    best_epoch = 0
    best_state: dict[str, np.ndarray] = {name: p.data.copy() for name, p in parameters.items()}
    best_moments = ({}, {}, 0)
    rows = []
    stale = 0

    for epoch in tqdm(range(1, config.max_epochs + 1), desc=desc, leave=False):
        ctx = ForwardContext(training=True, rng=rng)
        losses = []
        for batch in make_batches(rng):
            optimizer.zero_grad()
            loss = batch_loss(batch, ctx)
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        train_loss = float(np.mean(losses)) if losses else 0.0
        scores = validate()
        val_loss = scores.get("val_loss", train_loss)
        rows.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                     "val_acc": scores.get("val_acc", np.nan), "val_mcc": scores.get("val_mcc", np.nan)})

        if val_loss < best_loss:
            best_loss, best_epoch, stale = val_loss, epoch, 0
            best_state = {name: p.data.copy() for name, p in parameters.items()}
            best_moments = (
                {k: v.copy() for k, v in optimizer.m.items()},
                {k: v.copy() for k, v in optimizer.v.items()},
                optimizer.t,
            )
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(f"{desc}: early stop at epoch {epoch}, best epoch {best_epoch}")
                break

    for name, p in parameters.items():
        p.data[...] = best_state[name]
    optimizer.load_state(*best_moments)
    return optimizer, pd.DataFrame(rows, columns=LOG_COLUMNS), best_epoch


def predict_collection_samples(
    model: CometModel,
    inputs: GraphInputs,
    samples: Sequence[CollectionSample],
    batch_size: int,
) -> np.ndarray:
    """Upward-trend probabilities in the order of `samples`."""
    probabilities = np.zeros(len(samples))
    index = {id(s): i for i, s in enumerate(samples)}
    with no_grad():
        cache: dict[int, Tensor] = {}
        for batch in collection_batches(samples, batch_size):
            window, _ = model.encode_window([s.position for s in batch], [s.day for s in batch], inputs, EVAL, cache)
            p = model.predict_collection(window).sigmoid().data
            probabilities[[index[id(s)] for s in batch]] = p
    return probabilities


def train_collection(
    model: CometModel,
    inputs: GraphInputs,
    samples: Mapping[Split, Sequence[CollectionSample]],
    config: ModelConfig,
    seed: int,
) -> TrainResult:
    """
    Train the backbone and collection predictor.

    Raises:
        DataValidationError: When there is no training sample.
    """
    train = list(samples.get(Split.TRAIN, []))
    validation = list(samples.get(Split.VALIDATION, []))
    if not train:
        raise DataValidationError("empty training set")
    parameters = model.backbone_parameters()
    logger.info(f"Training collection task: {len(train)} train / {len(validation)} validation samples")

    def batch_loss(batch: Sequence[CollectionSample], ctx: ForwardContext) -> Tensor:
        window, _ = model.encode_window([s.position for s in batch], [s.day for s in batch], inputs, ctx)
        logits = model.predict_collection(window, ctx)
        loss = bce_with_logits(logits, np.asarray([s.label for s in batch], dtype=np.float64))
        return loss + config.l2_weight * l2_penalty(list(parameters.values()))

    def validate() -> dict[str, float]:
        if not validation:
            return {}
        probabilities = predict_collection_samples(model, inputs, validation, config.batch)
        labels = np.asarray([s.label for s in validation])
        acc, mcc = metrics_classification(probabilities, labels)
        return {"val_loss": binary_cross_entropy(probabilities, labels), "val_acc": acc, "val_mcc": mcc}

    optimizer, log, best_epoch = fit(
        parameters, lambda rng: collection_batches(train, config.batch, rng),
        batch_loss, validate, config, seed, "collection",
    )
    return TrainResult(optimizer, log, best_epoch)


def window_embeddings(
    model: CometModel,
    inputs: GraphInputs,
    samples: Sequence[TokenSample],
    batch_size: int,
) -> dict[tuple[int, int], np.ndarray]:
    """Frozen window embedding of every distinct (collection row, reference day)."""
    keys = sorted({(s.position, s.reference_day) for s in samples}, key=lambda k: (k[1], k[0]))
    result: dict[tuple[int, int], np.ndarray] = {}
    with no_grad():
        cache: dict[int, Tensor] = {}
        for start in range(0, len(keys), batch_size):
            chunk = keys[start:start + batch_size]
            window, _ = model.encode_window([k[0] for k in chunk], [k[1] for k in chunk], inputs, EVAL, cache)
            for k, row in zip(chunk, window.data):
                result[k] = row.copy()
    return result


def _window_tensor(windows: Optional[Mapping[tuple[int, int], np.ndarray]], samples: Sequence[TokenSample]) -> Optional[Tensor]:
    if windows is None:
        return None
    return Tensor(np.stack([windows[(s.position, s.reference_day)] for s in samples]))


def predict_token_samples(
    model: CometModel,
    inputs: GraphInputs,
    samples: Sequence[TokenSample],
    scaler: TokenScaler,
    batch_size: int,
    windows: Optional[Mapping[tuple[int, int], np.ndarray]] = None,
) -> np.ndarray:
    """log1p price predictions in the order of `samples`."""
    if not samples:
        return np.zeros(0)
    if windows is None and model.flags.collection_embedding:
        windows = window_embeddings(model, inputs, samples, batch_size)
    predictions = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            batch = token_batch(samples[start:start + batch_size], scaler)
            sales = model.encode_sales(batch.events, batch.valid)
            predictions.append(model.predict_token(sales, batch.global_features, _window_tensor(windows, batch.samples)).data)
    return np.concatenate(predictions)


def train_token(
    model: CometModel,
    inputs: GraphInputs,
    samples: Mapping[Split, Sequence[TokenSample]],
    config: ModelConfig,
    seed: int,
) -> TrainResult:
    """
    Train the token head on a frozen backbone.

    Raises:
        DataValidationError: When there is no training sample.
    """
    train = list(samples.get(Split.TRAIN, []))
    validation = list(samples.get(Split.VALIDATION, []))
    if not train:
        raise DataValidationError("empty training set")
    scaler = TokenScaler.fit(train)
    parameters = model.token_head_parameters()
    windows = None
    if model.flags.collection_embedding:
        windows = window_embeddings(model, inputs, train + validation, config.batch)
    logger.info(f"Training token task: {len(train)} train / {len(validation)} validation samples")

    def batch_loss(batch, ctx: ForwardContext) -> Tensor:
        sales = model.encode_sales(batch.events, batch.valid, ctx)
        predictions = model.predict_token(sales, batch.global_features, _window_tensor(windows, batch.samples), ctx)
        return mse(predictions, batch.targets) + config.l2_weight * l2_penalty(list(parameters.values()))

    def validate() -> dict[str, float]:
        if not validation:
            return {}
        predictions = predict_token_samples(model, inputs, validation, scaler, config.batch, windows)
        targets = np.asarray([s.target for s in validation])
        return {"val_loss": float(np.mean((predictions - targets) ** 2))}

    optimizer, log, best_epoch = fit(
        parameters, lambda rng: token_batches(train, config.batch, scaler, rng),
        batch_loss, validate, config, seed, "token",
    )
    return TrainResult(optimizer, log, best_epoch, scaler)
