"""
Weighted modularity and a seeded Louvain implementation.

Louvain alternates two phases until a local-move phase changes nothing:
nodes are visited in a seeded random order and moved to the neighbouring
community with the largest modularity gain. A node only leaves its community on a
strict improvement, so staying put wins every tie; among tied candidates the
lowest community id wins. Then every community is collapsed into one node whose
self-loop carries its internal weight.
"""
from collections import defaultdict
from collections.abc import Hashable, Iterable, Mapping
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx
import numpy as np
import pandas as pd
from loguru import logger

_EPS: float = 1e-12


def modularity(graph: nx.Graph, partition: Mapping[Hashable, int], resolution: float = 1.0) -> float:
    """
    Q = sum over communities of w_in/W - resolution * (deg/(2W))^2.

    W is the total edge weight; a self-loop counts once toward W and twice toward
    its node's degree. An edgeless graph has Q = 0.
    """
    total = graph.size(weight="weight")
    if total == 0:
        return 0.0
    internal: defaultdict[int, float] = defaultdict(float)
    degree: defaultdict[int, float] = defaultdict(float)
    for node, deg in graph.degree(weight="weight"):
        degree[partition[node]] += deg
    for u, v, w in graph.edges(data="weight", default=1):
        if partition[u] == partition[v]:
            internal[partition[u]] += w
    return float(sum(
        internal[c] / total - resolution * (degree[c] / (2 * total)) ** 2 for c in degree
    ))


@dataclass(frozen=True)
class CommunityAssignment:
    """
    Wallet clusters.

    Attributes:
        clusters (Mapping[str, int]): Wallet to cluster id, ids numbered by smallest member.
        modularity (float): Q of the partition on the transfer graph.
        seed (int): Seed of the node visiting order.
        trace (tuple[float, ...]): Q after every local-move sweep of every level, starting
            from the all-singleton partition. Empty when read back from disk.
    """
    clusters: Mapping[str, int]
    modularity: float
    seed: int
    trace: tuple[float, ...] = field(default=(), compare=False)

    @property
    def n_clusters(self) -> int:
        return len(set(self.clusters.values()))

    def roster(self) -> dict[int, list[str]]:
        members: defaultdict[int, list[str]] = defaultdict(list)
        for wallet, cluster in sorted(self.clusters.items()):
            members[cluster].append(wallet)
        return dict(sorted(members.items()))

    def cluster(self, wallet: str) -> int:
        return self.clusters[wallet]

    def with_wallets(self, wallets: Iterable[str]) -> "CommunityAssignment":
        """Give every wallet missing from the assignment its own singleton cluster."""
        clusters = dict(self.clusters)
        next_id = max(clusters.values(), default=-1) + 1
        for wallet in sorted(set(wallets) - clusters.keys()):
            clusters[wallet] = next_id
            next_id += 1
        return CommunityAssignment(clusters, self.modularity, self.seed, self.trace)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(sorted(self.clusters.items()), columns=["wallet", "cluster_id"])

    def write_csv(self, file: str) -> str:
        with open(file, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"# seed={self.seed} modularity={self.modularity:.12f}\n")
            self.to_frame().to_csv(f, index=False, lineterminator="\n")
        return file

    @classmethod
    def read_csv(cls, file: str) -> "CommunityAssignment":
        with open(file, "r", encoding="utf-8") as f:
            header = dict(item.split("=", 1) for item in f.readline().lstrip("#").split())
        frame = pd.read_csv(file, skiprows=1, dtype={"wallet": str, "cluster_id": int})
        clusters = dict(zip(frame["wallet"], frame["cluster_id"].astype(int)))
        return cls(clusters, float(header["modularity"]), int(header["seed"]))


class _Level:
    """Integer-indexed weighted graph of one Louvain level."""

    def __init__(self, adjacency: list[dict[int, float]]) -> None:
        self.adjacency = adjacency
        self.degree = np.array([
            sum(w for j, w in neighbours.items() if j != i) + 2 * neighbours.get(i, 0.0)
            for i, neighbours in enumerate(adjacency)
        ], dtype=np.float64)
        self.total = float(self.degree.sum()) / 2

    def __len__(self) -> int:
        return len(self.adjacency)

    def modularity(self, community: list[int], resolution: float) -> float:
        """Q of the level graph; equal to Q of the original graph under the induced partition."""
        internal: defaultdict[int, float] = defaultdict(float)
        degree: defaultdict[int, float] = defaultdict(float)
        for i, neighbours in enumerate(self.adjacency):
            degree[community[i]] += self.degree[i]
            for j, w in neighbours.items():
                if i == j:
                    internal[community[i]] += w
                elif community[i] == community[j]:
                    internal[community[i]] += w / 2
        return float(sum(
            internal[c] / self.total - resolution * (degree[c] / (2 * self.total)) ** 2 for c in degree
        ))

    def local_moves(
        self,
        rng: np.random.Generator,
        resolution: float,
        trace: Optional[list[float]] = None,
    ) -> tuple[list[int], bool]:
        """
        Repeat sweeps over the nodes until one moves nothing.

        Appends Q after each sweep to `trace` when given.
        """
        community = list(range(len(self)))
        community_degree = self.degree.copy()
        moved_any = False
        order = rng.permutation(len(self))
        improved = True
        while improved:
            improved = False
            for i in order.tolist():
                current = community[i]
                k_i = self.degree[i]
                links: defaultdict[int, float] = defaultdict(float)
                for j, w in self.adjacency[i].items():
                    if j != i:
                        links[community[j]] += w
                community_degree[current] -= k_i

                def gain(c: int) -> float:
                    return links.get(c, 0.0) - resolution * community_degree[c] * k_i / (2 * self.total)

                best, best_gain = current, gain(current)
                for c in sorted(links):
                    g = gain(c)
                    if g > best_gain + _EPS:
                        best, best_gain = c, g
                community_degree[best] += k_i
                if best != current:
                    community[i] = best
                    improved = moved_any = True
            if trace is not None:
                trace.append(self.modularity(community, resolution))
        return community, moved_any

    def collapse(self, community: list[int]) -> tuple["_Level", list[int]]:
        """Aggregate communities into nodes numbered by first appearance."""
        relabel: dict[int, int] = {}
        for c in community:
            relabel.setdefault(c, len(relabel))
        mapping = [relabel[c] for c in community]
        adjacency: list[dict[int, float]] = [defaultdict(float) for _ in relabel]
        for i, neighbours in enumerate(self.adjacency):
            for j, w in neighbours.items():
                a, b = mapping[i], mapping[j]
                if i == j:
                    adjacency[a][a] += w
                elif a == b:
                    # each internal edge is seen from both ends
                    adjacency[a][a] += w / 2
                else:
                    adjacency[a][b] += w
        return _Level([dict(n) for n in adjacency]), mapping


def louvain(graph: nx.Graph, seed: int, resolution: float = 1.0) -> CommunityAssignment:
    """
    Detect communities by modularity maximization.

    Parameters:
        graph (nx.Graph): Weighted undirected graph ("weight" attribute, default 1).
        seed (int): Seed of the node visiting order.
        resolution (float): Modularity resolution.

    Returns:
        CommunityAssignment: Partition of every graph node and its modularity.
    """
    nodes = sorted(graph.nodes)
    index = {node: i for i, node in enumerate(nodes)}
    adjacency: list[dict[int, float]] = [defaultdict(float) for _ in nodes]
    for u, v, w in graph.edges(data="weight", default=1):
        adjacency[index[u]][index[v]] += w
        if u != v:
            adjacency[index[v]][index[u]] += w
    level = _Level([dict(n) for n in adjacency])
    membership = list(range(len(nodes)))

    rng = np.random.default_rng(seed)
    trace: list[float] = []
    if level.total > 0:
        trace.append(level.modularity(membership, resolution))
        while True:
            community, moved = level.local_moves(rng, resolution, trace)
            if not moved:
                break
            level, mapping = level.collapse(community)
            membership = [mapping[m] for m in membership]

    # number clusters by their smallest member
    first: dict[int, int] = {}
    for i in range(len(nodes)):
        first.setdefault(membership[i], len(first))
    partition = {node: first[membership[i]] for i, node in enumerate(nodes)}
    q = modularity(graph, partition, resolution)
    logger.info(f"Louvain: {len(first)} communities over {len(nodes)} wallets, Q={q:.4f}")
    logger.debug(f"Louvain sweep modularity: {[round(value, 6) for value in trace]}")
    return CommunityAssignment(partition, q, seed, tuple(trace))
