"""
Samples of the two prediction tasks.

A collection sample (c, T) labels whether c's daily price rises from T to T + N.
A token sample is a retained sale of token u on day d; its inputs are read on or
before the reference day d - N, so the model predicts N days ahead.
"""
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from src.config.enums import Split, TxKind
from src.evaluation.split import SplitPlan
from src.graph.schema import FeatureBlock, Transform, fit_block
from src.graph.snapshot import NodeUniverse
from src.ingest.records import MarketData, TransactionRecord
from src.model.comet import SALE_EVENT_FEATURES, TOKEN_GLOBAL_FEATURES
from src.preprocessor.pipeline import CleanMarket

_KIND_COLUMN: dict[TxKind, int] = {TxKind.MINT: 1, TxKind.SALE: 2, TxKind.TRANSFER: 3, TxKind.BURN: 4}


def trend_label(price_now: float, price_future: float) -> int:
    """1 when the price strictly rises."""
    return int(price_future - price_now > 0)


@dataclass(frozen=True)
class CollectionSample:
    collection: str
    position: int
    day: int
    label: int
    split: Split


def build_collection_samples(
    series: Mapping,
    plan: SplitPlan,
    universe: NodeUniverse,
) -> dict[Split, list[CollectionSample]]:
    """Every (collection, T) whose window and label both fall inside one split."""
    samples: dict[Split, list[CollectionSample]] = {split: [] for split in Split}
    step = plan.step
    for collection in plan.collections:
        if collection not in universe.collection_index:
            continue
        s = series[collection]
        position = universe.collection_position(collection)
        for day in range(s.first_day + plan.history, s.last_day - step + 1):
            split = plan.sample_split(collection, day)
            if split is None:
                continue
            label = trend_label(s.price(day), s.price(day + step))
            samples[split].append(CollectionSample(collection, position, day, label, split))
    return samples


def collection_batches(
    samples: Sequence[CollectionSample],
    batch_size: int,
    rng: Optional[np.random.Generator] = None,
) -> list[list[CollectionSample]]:
    """
    Chunks of samples ordered by target day, so a batch spans few distinct windows.

    With `rng` the order of the chunks is shuffled.
    """
    ordered = sorted(samples, key=lambda s: (s.day, s.position))
    batches = [ordered[i:i + batch_size] for i in range(0, len(ordered), batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


@dataclass(frozen=True)
class TokenSample:
    """
    Attributes:
        events (np.ndarray): (length, 3) raw sale price, ETH-USD rate and collection price, oldest first.
        global_features (np.ndarray): (5,) rarity and lifetime mint/sale/transfer/burn counts.
        target (float): log1p of the sale price.
    """
    collection: str
    position: int
    token: str
    day: int
    reference_day: int
    events: np.ndarray
    global_features: np.ndarray
    target: float
    split: Split
    price_eth: float = field(default=0.0)


def build_token_samples(
    market: MarketData,
    clean: CleanMarket,
    plan: SplitPlan,
    universe: NodeUniverse,
    max_length: int = 16,
) -> dict[Split, list[TokenSample]]:
    """
    One sample per retained sale whose reference day d - N and sale day d share a split.

    The sale history holds the token's retained sales on days up to d - N, truncated
    to the most recent `max_length`; lifetime counts include every event kind.
    """
    step = plan.step
    by_token: defaultdict[tuple[str, str], list[TransactionRecord]] = defaultdict(list)
    for record in market.records:
        by_token[record.token_key].append(record)

    samples: dict[Split, list[TokenSample]] = {split: [] for split in Split}
    for (collection, token), records in sorted(by_token.items()):
        if collection not in plan.ranges or collection not in universe.collection_index:
            continue
        series = clean.series[collection]
        rarity_table = clean.rarity.get(collection)
        rarity = rarity_table.token(token) if rarity_table is not None else 0.0
        position = universe.collection_position(collection)

        def event_row(sale: TransactionRecord) -> list[float]:
            collection_price = series.price(sale.day) if sale.day in series else sale.price_eth
            return [sale.price_eth, market.rates.rate(sale.day), collection_price]

        for record in records:
            if not clean.is_retained_sale(record):
                continue
            reference = record.day - step
            split = plan.sample_split(collection, reference, step)
            if split is None:
                continue
            history = [r for r in records if r.day <= reference and clean.is_retained_sale(r)][-max_length:]
            counts = np.zeros(len(TOKEN_GLOBAL_FEATURES))
            counts[0] = rarity
            for r in records:
                if r.day <= reference:
                    counts[_KIND_COLUMN[r.kind]] += 1
            events = np.asarray([event_row(r) for r in history], dtype=np.float64).reshape(-1, len(SALE_EVENT_FEATURES))
            samples[split].append(TokenSample(
                collection, position, token, record.day, reference, events, counts,
                float(np.log1p(record.price_eth)), split, float(record.price_eth),
            ))
    return samples


@dataclass(frozen=True)
class TokenScaler:
    """Normalization of token event and global features, fitted on training samples."""
    events: FeatureBlock
    global_features: FeatureBlock

    @classmethod
    def fit(cls, samples: Iterable[TokenSample]) -> "TokenScaler":
        samples = list(samples)
        event_rows = [s.events for s in samples if len(s.events)]
        events = np.concatenate(event_rows) if event_rows else np.zeros((0, len(SALE_EVENT_FEATURES)))
        globals_ = np.asarray([s.global_features for s in samples]).reshape(-1, len(TOKEN_GLOBAL_FEATURES))
        return cls(
            fit_block(SALE_EVENT_FEATURES, (Transform.LOG1P, Transform.IDENTITY, Transform.LOG1P), events),
            fit_block(TOKEN_GLOBAL_FEATURES, (Transform.LOG1P,) * len(TOKEN_GLOBAL_FEATURES), globals_),
        )

    def to_dict(self) -> dict[str, Any]:
        return {"events": self.events.to_dict(), "global_features": self.global_features.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TokenScaler":
        return cls(FeatureBlock.from_dict(data["events"]), FeatureBlock.from_dict(data["global_features"]))


@dataclass(frozen=True)
class TokenBatch:
    samples: Sequence[TokenSample]
    events: np.ndarray
    valid: np.ndarray
    global_features: np.ndarray
    targets: np.ndarray


def token_batch(samples: Sequence[TokenSample], scaler: TokenScaler) -> TokenBatch:
    """Pad event sequences at the end to the longest one (at least 1)."""
    length = max([len(s.events) for s in samples] + [1])
    events = np.zeros((len(samples), length, len(SALE_EVENT_FEATURES)))
    valid = np.zeros((len(samples), length), dtype=bool)
    for i, s in enumerate(samples):
        n = len(s.events)
        if n:
            events[i, :n] = scaler.events.apply(s.events)
            valid[i, :n] = True
    global_features = scaler.global_features.apply(np.asarray([s.global_features for s in samples]))
    targets = np.asarray([s.target for s in samples], dtype=np.float64)
    return TokenBatch(samples, events, valid, global_features, targets)


def token_batches(
    samples: Sequence[TokenSample],
    batch_size: int,
    scaler: TokenScaler,
    rng: Optional[np.random.Generator] = None,
) -> list[TokenBatch]:
    order = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    return [
        token_batch([samples[i] for i in order[start:start + batch_size]], scaler)
        for start in range(0, len(samples), batch_size)
    ]
