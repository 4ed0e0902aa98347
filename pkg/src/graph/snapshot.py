"""
Daily heterogeneous transaction graphs.

Node indices are global within a `NodeUniverse`: wallets first, then collections.
Every universe node is present in every snapshot; inactive wallets simply have
zero dynamic features, and a collection outside its price series is marked absent
and loses its edges.
"""
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import numpy.typing as npt
from loguru import logger
from tqdm import tqdm

from src.config.enums import Relation, TxKind
from src.ingest.records import MarketData, TransactionRecord
from src.preprocessor.aggregation import CollectionDailySeries
from src.preprocessor.ownership import HoldingKey, OwnershipLedger
from src.preprocessor.pipeline import CleanMarket

WALLET_FEATURES: tuple[str, ...] = (
    "mint_count", "sale_count", "transfer_count", "burn_count", "holding_count", "asset_value",
)
COLLECTION_DYNAMIC_FEATURES: tuple[str, ...] = (
    "daily_price", "mint_count", "sale_count", "transfer_count", "burn_count", "eth_usd", "sale_volume",
)
RELATIONS: tuple[Relation, ...] = tuple(Relation)

_KIND_COLUMN: dict[TxKind, int] = {TxKind.MINT: 0, TxKind.SALE: 1, TxKind.TRANSFER: 2, TxKind.BURN: 3}


@dataclass(frozen=True)
class NodeUniverse:
    wallets: tuple[str, ...]
    collections: tuple[str, ...]
    wallet_index: Mapping[str, int] = field(init=False, repr=False)
    collection_index: Mapping[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "wallet_index", {w: i for i, w in enumerate(self.wallets)})
        offset = len(self.wallets)
        object.__setattr__(self, "collection_index", {c: offset + i for i, c in enumerate(self.collections)})

    @property
    def n_wallets(self) -> int:
        return len(self.wallets)

    @property
    def n_collections(self) -> int:
        return len(self.collections)

    @property
    def n_nodes(self) -> int:
        return self.n_wallets + self.n_collections

    def collection_position(self, collection: str) -> int:
        """Row of `collection` in collection-only arrays."""
        return self.collection_index[collection] - self.n_wallets


def node_universe(
    records: Iterable[TransactionRecord],
    collections: Iterable[str],
    window: tuple[int, int],
) -> NodeUniverse:
    """Wallets with any event inside `window` and every priceable collection."""
    wallets: set[str] = set()
    for record in records:
        if window[0] <= record.day <= window[1]:
            for wallet in (record.from_wallet, record.to_wallet):
                if wallet is not None:
                    wallets.add(wallet)
    return NodeUniverse(tuple(sorted(wallets)), tuple(sorted(collections)))


@dataclass(frozen=True)
class EdgeSet:
    """Edges of one relation; `features` has one column for featured relations, zero otherwise."""
    src: npt.NDArray[np.int64]
    dst: npt.NDArray[np.int64]
    features: npt.NDArray[np.float64]

    @classmethod
    def empty(cls, relation: Relation) -> "EdgeSet":
        width = 1 if relation.has_feature else 0
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, width)))

    def __len__(self) -> int:
        return len(self.src)


@dataclass(frozen=True)
class SnapshotGraph:
    """
    One day's graph.

    Attributes:
        day (int): Day index.
        wallet_features (NDArray): (n_wallets, 6) dynamic wallet features.
        collection_dynamic (NDArray): (n_collections, 7) dynamic collection features.
        collection_static (NDArray): (n_collections, static width) static features.
        collection_present (NDArray): Collections with a price series covering `day`.
        edges (Mapping[Relation, EdgeSet]): Edges by relation. Collection-wallet relations
            store the collection as `src`.
    """
    day: int
    wallet_features: npt.NDArray[np.float64]
    collection_dynamic: npt.NDArray[np.float64]
    collection_static: npt.NDArray[np.float64]
    collection_present: npt.NDArray[np.bool_]
    edges: Mapping[Relation, EdgeSet]

    def n_edges(self) -> int:
        return sum(len(edge_set) for edge_set in self.edges.values())

    def replace(self, **changes) -> "SnapshotGraph":
        values = {
            "day": self.day,
            "wallet_features": self.wallet_features,
            "collection_dynamic": self.collection_dynamic,
            "collection_static": self.collection_static,
            "collection_present": self.collection_present,
            "edges": self.edges,
        }
        values.update(changes)
        return SnapshotGraph(**values)


def static_collection_features(
    universe: NodeUniverse,
    market: MarketData,
) -> npt.NDArray[np.float64]:
    """Visual embedding, textual embedding and total supply per collection row."""
    rows = []
    for collection in universe.collections:
        supply = market.collections[collection].total_supply if collection in market.collections else 0
        rows.append(np.concatenate([
            market.visual.vector(collection),
            market.textual.vector(collection),
            [float(supply)],
        ]))
    return np.asarray(rows, dtype=np.float64).reshape(universe.n_collections, 2 * market.visual.dim + 1)


class _EdgeBuffer:
    def __init__(self) -> None:
        self.src: defaultdict[Relation, list[int]] = defaultdict(list)
        self.dst: defaultdict[Relation, list[int]] = defaultdict(list)
        self.features: defaultdict[Relation, list[float]] = defaultdict(list)

    def add(self, relation: Relation, src: int, dst: int, feature: Optional[float] = None) -> None:
        self.src[relation].append(src)
        self.dst[relation].append(dst)
        if relation.has_feature:
            self.features[relation].append(float(feature))

    def freeze(self) -> dict[Relation, EdgeSet]:
        result: dict[Relation, EdgeSet] = {}
        for relation in RELATIONS:
            if not self.src[relation]:
                result[relation] = EdgeSet.empty(relation)
                continue
            width = 1 if relation.has_feature else 0
            features = np.asarray(self.features[relation], dtype=np.float64).reshape(-1, width)
            result[relation] = EdgeSet(
                np.asarray(self.src[relation], dtype=np.int64),
                np.asarray(self.dst[relation], dtype=np.int64),
                features,
            )
        return result


def build_snapshot(
    day: int,
    records: Sequence[TransactionRecord],
    series: Mapping[str, CollectionDailySeries],
    ledger: OwnershipLedger,
    universe: NodeUniverse,
    collection_static: npt.NDArray[np.float64],
    wash_ids: frozenset[str] = frozenset(),
    holdings: Optional[Mapping[HoldingKey, int]] = None,
) -> SnapshotGraph:
    """
    Build the snapshot of `day`.

    Each non-wash sale yields SALE_WW (seller, buyer), SALE_FROM (collection, seller) and
    SALE_TO (collection, buyer) edges with the price feature; each transfer yields
    TRANSFER_WW, TRANSFER_OUT (collection, sender) and TRANSFER_IN (collection, receiver);
    mints and burns yield featureless edges; every positive day-end holding yields a HOLD
    edge with the owned count. Wash sales still count in the daily count features.

    Parameters:
    - records: All records of `day`, in any order.
    - holdings: Day-end holdings, computed from `ledger` when omitted.
    """
    records = sorted(records, key=TransactionRecord.sort_key)
    wallet_index = universe.wallet_index
    collection_index = universe.collection_index
    n_wallets = universe.n_wallets

    present = np.asarray([day in series[c] if c in series else False for c in universe.collections], dtype=bool)
    wallet_features = np.zeros((n_wallets, len(WALLET_FEATURES)))
    collection_dynamic = np.zeros((universe.n_collections, len(COLLECTION_DYNAMIC_FEATURES)))
    buffer = _EdgeBuffer()
    dropped: set[str] = set()

    for record in records:
        column = _KIND_COLUMN[record.kind]
        for wallet in {record.from_wallet, record.to_wallet} - {None}:
            if wallet in wallet_index:
                wallet_features[wallet_index[wallet], column] += 1

        node = collection_index.get(record.collection)
        if node is None:
            continue
        if not present[node - n_wallets]:
            dropped.add(record.collection)
            continue
        collection_dynamic[node - n_wallets, 1 + column] += 1

        src = wallet_index.get(record.from_wallet) if record.from_wallet is not None else None
        dst = wallet_index.get(record.to_wallet) if record.to_wallet is not None else None
        if record.kind is TxKind.MINT and dst is not None:
            buffer.add(Relation.MINT, node, dst)
        elif record.kind is TxKind.BURN and src is not None:
            buffer.add(Relation.BURN, node, src)
        elif record.kind is TxKind.SALE and record.tx_id not in wash_ids:
            if src is not None and dst is not None:
                buffer.add(Relation.SALE_WW, src, dst, record.price_eth)
            if src is not None:
                buffer.add(Relation.SALE_FROM, node, src, record.price_eth)
            if dst is not None:
                buffer.add(Relation.SALE_TO, node, dst, record.price_eth)
        elif record.kind is TxKind.TRANSFER:
            if src is not None and dst is not None:
                buffer.add(Relation.TRANSFER_WW, src, dst)
            if src is not None:
                buffer.add(Relation.TRANSFER_OUT, node, src)
            if dst is not None:
                buffer.add(Relation.TRANSFER_IN, node, dst)

    if holdings is None:
        holdings = ledger.holdings(day)
    for (wallet, collection), count in sorted(holdings.items()):
        node = collection_index.get(collection)
        if wallet in wallet_index and node is not None and present[node - n_wallets]:
            buffer.add(Relation.HOLD, node, wallet_index[wallet], count)

    for wallet, (held, value) in ledger.wallet_totals(day, holdings).items():
        if wallet in wallet_index:
            wallet_features[wallet_index[wallet], 4] = held
            wallet_features[wallet_index[wallet], 5] = value

    for position, collection in enumerate(universe.collections):
        if not present[position]:
            continue
        frame = series[collection].frame
        collection_dynamic[position, 0] = frame.at[day, "median_price_eth"]
        collection_dynamic[position, 5] = frame.at[day, "eth_usd"]
        collection_dynamic[position, 6] = frame.at[day, "sale_volume_eth"]

    if dropped:
        logger.warning(f"day {day}: dropped collection nodes outside their series: {sorted(dropped)}")

    return SnapshotGraph(day, wallet_features, collection_dynamic, collection_static, present, buffer.freeze())


def build_snapshots(
    market: MarketData,
    clean: CleanMarket,
    universe: NodeUniverse,
    days: tuple[int, int],
) -> dict[int, SnapshotGraph]:
    """Build snapshots for every day of the inclusive range `days`."""
    by_day: defaultdict[int, list[TransactionRecord]] = defaultdict(list)
    for record in market.records:
        by_day[record.day].append(record)

    static = static_collection_features(universe, market)
    wash_ids = frozenset(clean.wash_ids())
    snapshots: dict[int, SnapshotGraph] = {}
    holdings_iter = clean.ledger.iter_holdings(days[0], days[1])
    for day, holdings in tqdm(holdings_iter, total=days[1] - days[0] + 1, desc="snapshots"):
        snapshots[day] = build_snapshot(
            day, by_day.get(day, []), clean.series, clean.ledger, universe, static, wash_ids, holdings
        )
    return snapshots
