"""
Snapshot persistence: a single NPZ store per run and CSV edge-list exports.
"""
import os
from collections.abc import Iterable, Mapping

import numpy as np
import pandas as pd

from src.graph.snapshot import RELATIONS, EdgeSet, NodeUniverse, SnapshotGraph
from src.utils.saver import get_saver_strategy, load_npz


def save_snapshots(file: str, snapshots: Mapping[int, SnapshotGraph], universe: NodeUniverse) -> str:
    data: dict[str, np.ndarray] = {
        "universe/wallets": np.asarray(universe.wallets, dtype=str),
        "universe/collections": np.asarray(universe.collections, dtype=str),
        "days": np.asarray(sorted(snapshots), dtype=np.int64),
    }
    for day, snapshot in snapshots.items():
        prefix = f"day/{day}"
        data[f"{prefix}/wallet"] = snapshot.wallet_features
        data[f"{prefix}/dynamic"] = snapshot.collection_dynamic
        data[f"{prefix}/present"] = snapshot.collection_present
        for relation, edge_set in snapshot.edges.items():
            data[f"{prefix}/{relation.value}/src"] = edge_set.src
            data[f"{prefix}/{relation.value}/dst"] = edge_set.dst
            data[f"{prefix}/{relation.value}/features"] = edge_set.features
    if snapshots:
        data["static"] = next(iter(snapshots.values())).collection_static
    return get_saver_strategy("npz").save(file, data)


def load_snapshots(file: str) -> tuple[dict[int, SnapshotGraph], NodeUniverse]:
    data = load_npz(file)
    universe = NodeUniverse(
        tuple(str(w) for w in data["universe/wallets"]),
        tuple(str(c) for c in data["universe/collections"]),
    )
    static = data.get("static", np.zeros((universe.n_collections, 0)))
    snapshots: dict[int, SnapshotGraph] = {}
    for day in data["days"].tolist():
        prefix = f"day/{day}"
        edges = {
            relation: EdgeSet(
                data[f"{prefix}/{relation.value}/src"],
                data[f"{prefix}/{relation.value}/dst"],
                data[f"{prefix}/{relation.value}/features"],
            )
            for relation in RELATIONS
        }
        snapshots[day] = SnapshotGraph(
            day, data[f"{prefix}/wallet"], data[f"{prefix}/dynamic"], static, data[f"{prefix}/present"], edges
        )
    return snapshots, universe


def snapshot_edge_frame(snapshot: SnapshotGraph, universe: NodeUniverse) -> pd.DataFrame:
    """Typed edge list with node ids, one row per edge."""
    node_ids = universe.wallets + universe.collections
    rows = []
    for relation in RELATIONS:
        edge_set = snapshot.edges[relation]
        for i in range(len(edge_set)):
            feature = float(edge_set.features[i, 0]) if edge_set.features.shape[1] else None
            rows.append((relation.value, node_ids[edge_set.src[i]], node_ids[edge_set.dst[i]], feature))
    return pd.DataFrame(rows, columns=["relation", "src", "dst", "feature"])


def export_snapshots(
    directory: str,
    days: Iterable[int],
    snapshots: Mapping[int, SnapshotGraph],
    universe: NodeUniverse,
) -> list[str]:
    """Write `snapshot_<day>.csv` for each requested day that has a snapshot."""
    saver = get_saver_strategy("csv")
    files = []
    for day in sorted(set(days)):
        if day in snapshots:
            file = os.path.join(directory, f"snapshot_{day}.csv")
            files.append(saver.save(file, snapshot_edge_frame(snapshots[day], universe)))
    return files
