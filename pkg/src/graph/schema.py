"""
Feature transforms and normalization statistics.

Statistics are fitted on training-window snapshots only and then applied unchanged
to every day, so validation and test days never influence them.
"""
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np
import numpy.typing as npt

from src.config.enums import Relation
from src.errors import DataValidationError
from src.graph.snapshot import (
    COLLECTION_DYNAMIC_FEATURES, RELATIONS, WALLET_FEATURES, EdgeSet, SnapshotGraph,
)

MIN_STD: float = 1e-6


class Transform(Enum):
    LOG1P = 'log1p'
    IDENTITY = 'identity'
    PASSTHROUGH = 'passthrough'

    def apply(self, values: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        if self is Transform.LOG1P:
            return np.log1p(values)
        return values


@dataclass(frozen=True)
class FeatureBlock:
    """Named columns with a transform each and fitted mean/std; passthrough columns keep mean 0, std 1."""
    names: tuple[str, ...]
    transforms: tuple[Transform, ...]
    mean: npt.NDArray[np.float64]
    std: npt.NDArray[np.float64]

    def apply(self, values: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        if values.shape[-1] != len(self.names):
            raise DataValidationError(f"expected {len(self.names)} feature columns, got {values.shape[-1]}")
        out = np.empty_like(values, dtype=np.float64)
        for column, transform in enumerate(self.transforms):
            out[..., column] = transform.apply(values[..., column])
        return (out - self.mean) / self.std

    def to_dict(self) -> dict[str, Any]:
        return {
            "names": list(self.names),
            "transforms": [t.value for t in self.transforms],
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FeatureBlock":
        return cls(
            tuple(data["names"]),
            tuple(Transform(t) for t in data["transforms"]),
            np.asarray(data["mean"], dtype=np.float64),
            np.asarray(data["std"], dtype=np.float64),
        )


def fit_block(names: Sequence[str], transforms: Sequence[Transform], rows: npt.NDArray[np.float64]) -> FeatureBlock:
    """Fit mean/std of transformed `rows`; an empty row set fits the identity."""
    names, transforms = tuple(names), tuple(transforms)
    mean = np.zeros(len(names))
    std = np.ones(len(names))
    if len(rows):
        transformed = np.column_stack([t.apply(rows[:, i]) for i, t in enumerate(transforms)])
        fitted = np.array([t is not Transform.PASSTHROUGH for t in transforms])
        mean[fitted] = transformed.mean(axis=0)[fitted]
        std[fitted] = np.maximum(transformed.std(axis=0)[fitted], MIN_STD)
    return FeatureBlock(names, transforms, mean, std)


def static_feature_names(embedding_dim: int) -> tuple[str, ...]:
    return (
        tuple(f"visual_{i}" for i in range(embedding_dim))
        + tuple(f"textual_{i}" for i in range(embedding_dim))
        + ("total_supply",)
    )


_WALLET_TRANSFORMS = (Transform.LOG1P,) * len(WALLET_FEATURES)
_COLLECTION_TRANSFORMS = tuple(
    Transform.IDENTITY if name == "eth_usd" else Transform.LOG1P for name in COLLECTION_DYNAMIC_FEATURES
)
_EDGE_FEATURE_NAMES: dict[Relation, str] = {
    Relation.SALE_WW: "sale_price",
    Relation.SALE_FROM: "sale_price",
    Relation.SALE_TO: "sale_price",
    Relation.HOLD: "owned_count",
}


@dataclass(frozen=True)
class FeatureSchema:
    """
    Normalization of every node and edge feature block.

    Named importance features resolve to `(block, columns)` through `columns`:
    `wallet.<name>`, `collection.<name>`, `collection.visual_embedding`,
    `collection.textual_embedding` and `collection.total_supply`.
    """
    wallet: FeatureBlock
    collection_dynamic: FeatureBlock
    collection_static: FeatureBlock
    edges: Mapping[Relation, FeatureBlock]
    embedding_dim: int

    def apply(self, snapshot: SnapshotGraph) -> SnapshotGraph:
        """Normalized copy of `snapshot`; absent collections keep all-zero dynamic rows."""
        dynamic = self.collection_dynamic.apply(snapshot.collection_dynamic)
        dynamic[~snapshot.collection_present] = 0.0
        edges: dict[Relation, EdgeSet] = {}
        for relation, edge_set in snapshot.edges.items():
            if relation in self.edges and len(edge_set):
                edge_set = EdgeSet(edge_set.src, edge_set.dst, self.edges[relation].apply(edge_set.features))
            edges[relation] = edge_set
        return snapshot.replace(
            wallet_features=self.wallet.apply(snapshot.wallet_features),
            collection_dynamic=dynamic,
            collection_static=self.collection_static.apply(snapshot.collection_static),
            edges=edges,
        )

    def columns(self, feature: str) -> tuple[str, list[int]]:
        """Resolve a named feature to its block and column indices."""
        owner, _, name = feature.partition(".")
        if owner == "wallet" and name in self.wallet.names:
            return "wallet", [self.wallet.names.index(name)]
        if owner == "collection":
            if name in self.collection_dynamic.names:
                return "collection_dynamic", [self.collection_dynamic.names.index(name)]
            dim = self.embedding_dim
            if name == "visual_embedding":
                return "collection_static", list(range(0, dim))
            if name == "textual_embedding":
                return "collection_static", list(range(dim, 2 * dim))
            if name == "total_supply":
                return "collection_static", [2 * dim]
        raise KeyError(f"unknown feature '{feature}'")

    def to_dict(self) -> dict[str, Any]:
        return {
            "embedding_dim": self.embedding_dim,
            "wallet": self.wallet.to_dict(),
            "collection_dynamic": self.collection_dynamic.to_dict(),
            "collection_static": self.collection_static.to_dict(),
            "edges": {relation.value: block.to_dict() for relation, block in self.edges.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FeatureSchema":
        return cls(
            FeatureBlock.from_dict(data["wallet"]),
            FeatureBlock.from_dict(data["collection_dynamic"]),
            FeatureBlock.from_dict(data["collection_static"]),
            {Relation(key): FeatureBlock.from_dict(block) for key, block in data["edges"].items()},
            int(data["embedding_dim"]),
        )


def fit_schema(training_days: Iterable[int], snapshots: Mapping[int, SnapshotGraph], embedding_dim: int) -> FeatureSchema:
    """
    Fit normalization statistics on the snapshots of `training_days`.

    Wallet rows include inactive wallets; collection dynamic rows only where the
    collection is present; static rows once per collection.

    Raises:
        DataValidationError: When no training day has a snapshot.
    """
    days = sorted(day for day in set(training_days) if day in snapshots)
    if not days:
        raise DataValidationError("cannot fit feature schema: empty training split")
    train = [snapshots[day] for day in days]

    wallet_rows = np.concatenate([s.wallet_features for s in train])
    dynamic_rows = np.concatenate([s.collection_dynamic[s.collection_present] for s in train])
    static_names = static_feature_names(embedding_dim)
    static_transforms = (Transform.PASSTHROUGH,) * (2 * embedding_dim) + (Transform.LOG1P,)

    edges: dict[Relation, FeatureBlock] = {}
    for relation in RELATIONS:
        if not relation.has_feature:
            continue
        rows = np.concatenate([s.edges[relation].features for s in train])
        edges[relation] = fit_block((_EDGE_FEATURE_NAMES[relation],), (Transform.LOG1P,), rows)

    return FeatureSchema(
        wallet=fit_block(WALLET_FEATURES, _WALLET_TRANSFORMS, wallet_rows),
        collection_dynamic=fit_block(COLLECTION_DYNAMIC_FEATURES, _COLLECTION_TRANSFORMS, dynamic_rows),
        collection_static=fit_block(static_names, static_transforms, train[0].collection_static),
        edges=edges,
        embedding_dim=embedding_dim,
    )
