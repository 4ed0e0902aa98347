"""
Canonical in-memory data model of the market.

All types are immutable so parsed data can be shared freely between threads
and pipeline stages.
"""
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional

import numpy as np
import numpy.typing as npt

from src.config.enums import EmbeddingSource, TxKind

SECONDS_PER_DAY: int = 86400


def day_of(timestamp: int) -> int:
    """UTC calendar day index of a unix timestamp."""
    return timestamp // SECONDS_PER_DAY


@dataclass(frozen=True, slots=True)
class TransactionRecord:
    """
    One on-chain event.

    Mint has no `from_wallet`, Burn has no `to_wallet` and `price_eth` is set
    exactly for sales.
    """
    tx_id: str
    timestamp: int
    kind: TxKind
    from_wallet: Optional[str]
    to_wallet: Optional[str]
    collection: str
    token: str
    price_eth: Optional[float] = None

    @property
    def day(self) -> int:
        return day_of(self.timestamp)

    @property
    def token_key(self) -> tuple[str, str]:
        """Token ids are only unique within their collection."""
        return self.collection, self.token

    def sort_key(self) -> tuple[int, str]:
        return self.timestamp, self.tx_id


@dataclass(frozen=True, slots=True)
class ParseIssue:
    line_number: int
    reason: str
    line: str = ""


@dataclass(frozen=True)
class CollectionMeta:
    collection: str
    total_supply: int
    token_properties: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.total_supply < 0:
            raise ValueError(f"{self.collection}: total_supply must be nonnegative")
        object.__setattr__(self, "token_properties", MappingProxyType(dict(self.token_properties)))

    @property
    def n_tokens(self) -> int:
        return len(self.token_properties)

    def with_tokens(self, tokens: set[str]) -> "CollectionMeta":
        """Return a copy that also knows `tokens`, unknown ones without properties."""
        merged = dict(self.token_properties)
        for token in tokens:
            merged.setdefault(token, frozenset())
        return CollectionMeta(self.collection, self.total_supply, merged)


@dataclass(frozen=True)
class EthUsdRates:
    """Daily ETH-USD rate, gap free between `first_day` and `last_day`."""
    first_day: int
    values: tuple[float, ...]

    @property
    def last_day(self) -> int:
        return self.first_day + len(self.values) - 1

    def rate(self, day: int) -> float:
        """Rate of `day`, clamped to the covered range."""
        index = min(max(day - self.first_day, 0), len(self.values) - 1)
        return self.values[index]


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    vectors: Mapping[str, npt.NDArray[np.float64]]
    source: EmbeddingSource

    def __post_init__(self) -> None:
        for key, vector in self.vectors.items():
            if vector.shape != (self.dim,):
                raise ValueError(f"embedding '{key}' has shape {vector.shape}, expected ({self.dim},)")
            vector.setflags(write=False)
        object.__setattr__(self, "vectors", MappingProxyType(dict(self.vectors)))

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def vector(self, key: str) -> npt.NDArray[np.float64]:
        return self.vectors[key]


@dataclass(frozen=True)
class MarketData:
    """Everything ingestion produces for downstream stages."""
    records: tuple[TransactionRecord, ...]
    issues: tuple[ParseIssue, ...]
    collections: Mapping[str, CollectionMeta]
    rates: EthUsdRates
    visual: EmbeddingTable
    textual: EmbeddingTable

    @property
    def first_day(self) -> int:
        return self.records[0].day

    @property
    def last_day(self) -> int:
        return self.records[-1].day
