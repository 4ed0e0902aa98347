"""
Comparison models for both tasks.

Collection task: majority class, logistic regression and random forest on
flattened window features, and a price-only LSTM with temporal attention.
Token task: a random forest regressor on hand-made sale features.

All baselines read the same samples and splits as the graph model.
"""
from abc import ABC, abstractmethod
from collections.abc import Mapping, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from src.autodiff.functional import bce_with_logits, l2_penalty
from src.autodiff.tensor import Tensor, no_grad
from src.config.config_definitions import ModelConfig
from src.config.enums import Split, Variant
from src.errors import DataValidationError
from src.evaluation.metrics import binary_cross_entropy, metrics_classification
from src.model.datasets import CollectionSample, TokenSample, collection_batches
from src.model.layers import EVAL, LSTM, MLP, ForwardContext, Module, TemporalAttention
from src.model.training import fit
from src.preprocessor.aggregation import CollectionDailySeries

PRICE_STEP_FEATURES: tuple[str, ...] = ("log_price_ratio", "log_return")
WINDOW_STEP_FEATURES: tuple[str, ...] = PRICE_STEP_FEATURES + ("log_volume",)
TOKEN_BASELINE_FEATURES: tuple[str, ...] = (
    "rarity", "mint_count", "sale_count", "transfer_count", "burn_count",
    "n_sales", "last_sale_price", "mean_sale_price", "collection_price",
)
_EPS: float = 1e-9


def window_steps(
    series: Mapping[str, CollectionDailySeries],
    samples: Sequence[CollectionSample],
    history: int,
    with_volume: bool = True,
) -> np.ndarray:
    """
    Per-day features over [T - H, T], shape (batch, H + 1, features).

    Prices are taken relative to the price on T so windows of differently priced
    collections are comparable.
    """
    width = len(WINDOW_STEP_FEATURES if with_volume else PRICE_STEP_FEATURES)
    steps = np.zeros((len(samples), history + 1, width))
    for i, s in enumerate(samples):
        frame = series[s.collection].frame
        days = np.arange(s.day - history, s.day + 1)
        prices = frame.loc[days, "median_price_eth"].to_numpy(dtype=np.float64)
        log_prices = np.log(prices + _EPS)
        steps[i, :, 0] = log_prices - log_prices[-1]
        steps[i, 1:, 1] = np.diff(log_prices)
        if with_volume:
            steps[i, :, 2] = np.log1p(frame.loc[days, "sale_volume_eth"].to_numpy(dtype=np.float64))
    return steps


def window_features(series: Mapping[str, CollectionDailySeries], samples: Sequence[CollectionSample], history: int) -> np.ndarray:
    return window_steps(series, samples, history).reshape(len(samples), -1)


def _labels(samples: Sequence[CollectionSample]) -> np.ndarray:
    return np.asarray([s.label for s in samples], dtype=np.int64)


class CollectionBaseline(ABC):
    """Trend classifier fitted on training samples."""

    @abstractmethod
    def fit(self, samples: Mapping[Split, Sequence[CollectionSample]]) -> "CollectionBaseline":
        pass

    @abstractmethod
    def predict_proba(self, samples: Sequence[CollectionSample]) -> np.ndarray:
        pass


class MajorityBaseline(CollectionBaseline):
    def __init__(self) -> None:
        self.label = 0

    def fit(self, samples: Mapping[Split, Sequence[CollectionSample]]) -> "MajorityBaseline":
        train = _labels(samples.get(Split.TRAIN, []))
        if train.size == 0:
            raise DataValidationError("empty training set")
        self.label = int(train.mean() > 0.5)
        return self

    def predict_proba(self, samples: Sequence[CollectionSample]) -> np.ndarray:
        return np.full(len(samples), float(self.label))


class SklearnWindowBaseline(CollectionBaseline):
    """
    A scikit-learn classifier on flattened window features.

    Falls back to the training majority class when only one class is present.
    """

    def __init__(self, estimator, series: Mapping[str, CollectionDailySeries], history: int) -> None:
        self.estimator = estimator
        self.series = series
        self.history = history
        self.constant = None

    def fit(self, samples: Mapping[Split, Sequence[CollectionSample]]) -> "SklearnWindowBaseline":
        train = list(samples.get(Split.TRAIN, []))
        if not train:
            raise DataValidationError("empty training set")
        labels = _labels(train)
        if len(np.unique(labels)) < 2:
            logger.warning("Single-class training labels, predicting the constant class")
            self.constant = float(labels[0])
            return self
        self.estimator.fit(window_features(self.series, train, self.history), labels)
        return self

    def predict_proba(self, samples: Sequence[CollectionSample]) -> np.ndarray:
        if self.constant is not None:
            return np.full(len(samples), self.constant)
        if not samples:
            return np.zeros(0)
        probabilities = self.estimator.predict_proba(window_features(self.series, samples, self.history))
        return probabilities[:, list(self.estimator.classes_).index(1)]


class PriceAttentionLSTM(Module):
    """LSTM over daily price features with temporal attention and an MLP head."""

    def __init__(self, config: ModelConfig, seed: int) -> None:
        rng = np.random.default_rng(seed)
        d = config.hidden_dim
        self.lstm = LSTM(len(PRICE_STEP_FEATURES), d, rng)
        self.temporal = TemporalAttention(d, rng)
        self.head = MLP(d, d, 1, rng, config.dropout)

    def __call__(self, steps: np.ndarray, ctx: ForwardContext = EVAL) -> Tensor:
        states = self.lstm([Tensor(steps[:, t, :]) for t in range(steps.shape[1])])
        window, _ = self.temporal(states)
        return self.head(window, ctx).reshape(steps.shape[0])


class AttentionLSTMBaseline(CollectionBaseline):
    """Price-only sequence model trained like the graph model."""

    def __init__(self, series: Mapping[str, CollectionDailySeries], config: ModelConfig, seed: int) -> None:
        self.series = series
        self.config = config
        self.seed = seed
        self.network = PriceAttentionLSTM(config, seed)
        self.log = pd.DataFrame()

    def _steps(self, samples: Sequence[CollectionSample]) -> np.ndarray:
        return window_steps(self.series, samples, self.config.history, with_volume=False)

    def fit(self, samples: Mapping[Split, Sequence[CollectionSample]]) -> "AttentionLSTMBaseline":
        train = list(samples.get(Split.TRAIN, []))
        validation = list(samples.get(Split.VALIDATION, []))
        if not train:
            raise DataValidationError("empty training set")
        parameters = self.network.parameters()

        def batch_loss(batch: Sequence[CollectionSample], ctx: ForwardContext) -> Tensor:
            logits = self.network(self._steps(batch), ctx)
            loss = bce_with_logits(logits, _labels(batch).astype(np.float64))
            return loss + self.config.l2_weight * l2_penalty(list(parameters.values()))

        def validate() -> dict[str, float]:
            if not validation:
                return {}
            probabilities = self.predict_proba(validation)
            labels = _labels(validation)
            acc, mcc = metrics_classification(probabilities, labels)
            return {"val_loss": binary_cross_entropy(probabilities, labels), "val_acc": acc, "val_mcc": mcc}

        _, self.log, _ = fit(
            parameters, lambda rng: collection_batches(train, self.config.batch, rng),
            batch_loss, validate, self.config, self.seed, "alstm",
        )
        return self

    def predict_proba(self, samples: Sequence[CollectionSample]) -> np.ndarray:
        if not samples:
            return np.zeros(0)
        outputs = []
        with no_grad():
            for start in range(0, len(samples), self.config.batch):
                batch = samples[start:start + self.config.batch]
                outputs.append(self.network(self._steps(batch)).sigmoid().data)
        return np.concatenate(outputs)


def get_collection_baseline(
    variant: Variant,
    series: Mapping[str, CollectionDailySeries],
    config: ModelConfig,
    seed: int,
) -> CollectionBaseline:
    """
    Baseline for `variant`.

    Raises:
        ValueError: When `variant` is not a baseline.
    """
    match variant:
        case Variant.MAJORITY:
            return MajorityBaseline()
        case Variant.LOGREG:
            estimator = make_pipeline(StandardScaler(), LogisticRegression(max_iter=1000, random_state=seed))
            return SklearnWindowBaseline(estimator, series, config.history)
        case Variant.RANDOM_FOREST:
            return SklearnWindowBaseline(
                RandomForestClassifier(n_estimators=100, random_state=seed, n_jobs=1), series, config.history
            )
        case Variant.ALSTM:
            return AttentionLSTMBaseline(series, config, seed)
    raise ValueError(f"{variant.value} is not a baseline")


def token_baseline_features(series: Mapping[str, CollectionDailySeries], samples: Sequence[TokenSample]) -> np.ndarray:
    rows = np.zeros((len(samples), len(TOKEN_BASELINE_FEATURES)))
    for i, s in enumerate(samples):
        rows[i, :5] = np.log1p(s.global_features)
        rows[i, 5] = len(s.events)
        if len(s.events):
            prices = np.log1p(s.events[:, 0])
            rows[i, 6] = prices[-1]
            rows[i, 7] = prices.mean()
        rows[i, 8] = np.log1p(series[s.collection].price(s.reference_day))
    return rows


class TokenForestBaseline:
    """Random forest regressor of log1p sale prices."""

    def __init__(self, series: Mapping[str, CollectionDailySeries], seed: int) -> None:
        self.series = series
        self.model = RandomForestRegressor(n_estimators=100, random_state=seed, n_jobs=1)

    def fit(self, samples: Mapping[Split, Sequence[TokenSample]]) -> "TokenForestBaseline":
        train = list(samples.get(Split.TRAIN, []))
        if not train:
            raise DataValidationError("empty training set")
        self.model.fit(token_baseline_features(self.series, train), [s.target for s in train])
        return self

    def predict(self, samples: Sequence[TokenSample]) -> np.ndarray:
        if not samples:
            return np.zeros(0)
        return self.model.predict(token_baseline_features(self.series, samples))
