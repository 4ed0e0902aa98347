from collections import defaultdict
from collections.abc import Iterable

import networkx as nx

from src.config.enums import TxKind
from src.ingest.records import TransactionRecord


def detect_wash_sales(records: Iterable[TransactionRecord]) -> set[str]:
    """
    Flag sales whose token ownership cycles among a group of wallets.

    For every token a directed wallet graph is built from that token's sales. A sale
    is a wash sale when seller and buyer lie in the same strongly connected
    component of at least two wallets. Graphs are per token, so A->B on one token
    and B->A on another never flag each other.

    Returns:
    - set[str]: tx_ids of flagged sales.
    """
    sales_by_token: defaultdict[tuple[str, str], list[TransactionRecord]] = defaultdict(list)
    for record in records:
        if record.kind is TxKind.SALE:
            sales_by_token[record.token_key].append(record)

    flagged: set[str] = set()
    for sales in sales_by_token.values():
        if len(sales) < 2:
            continue
        graph = nx.DiGraph()
        graph.add_edges_from((sale.from_wallet, sale.to_wallet) for sale in sales)
        component_of: dict[str, int] = {}
        for index, component in enumerate(nx.strongly_connected_components(graph)):
            if len(component) >= 2:
                component_of.update(dict.fromkeys(component, index))
        for sale in sales:
            component = component_of.get(sale.from_wallet)
            if component is not None and component_of.get(sale.to_wallet) == component:
                flagged.add(sale.tx_id)
    return flagged
