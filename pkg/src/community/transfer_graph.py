from collections.abc import Iterable

import networkx as nx

from src.config.enums import TxKind
from src.ingest.records import TransactionRecord


def build_transfer_graph(records: Iterable[TransactionRecord], window: tuple[int, int]) -> nx.Graph:
    """
    Undirected wallet graph whose edge weight counts transfers between the pair.

    Transfers in either direction inside the inclusive day `window` count toward the
    same edge; self-transfers are dropped.
    """
    graph = nx.Graph()
    for record in records:
        if record.kind is not TxKind.TRANSFER or not window[0] <= record.day <= window[1]:
            continue
        a, b = record.from_wallet, record.to_wallet
        if a == b:
            continue
        if graph.has_edge(a, b):
            graph[a][b]["weight"] += 1
        else:
            graph.add_edge(a, b, weight=1)
    return graph
