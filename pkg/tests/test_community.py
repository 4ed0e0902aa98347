import itertools

import networkx as nx
import numpy as np
import pytest

from src.community.louvain import CommunityAssignment, _Level, louvain, modularity
from src.community.transfer_graph import build_transfer_graph

from tests.conftest import DAY0, records, ts


def all_partitions(nodes):
    """Every set partition of `nodes` as a node -> block id mapping."""
    if not nodes:
        yield {}
        return
    first, rest = nodes[0], nodes[1:]
    for partition in all_partitions(rest):
        blocks = sorted(set(partition.values()))
        for block in blocks + [len(blocks)]:
            yield {**partition, first: block}


def two_triangles():
    graph = nx.Graph()
    graph.add_edges_from([("a", "b"), ("b", "c"), ("a", "c"), ("d", "e"), ("e", "f"), ("d", "f"), ("c", "d")], weight=1)
    return graph


def test_modularity_matches_networkx():
    graph = two_triangles()
    graph.add_edge("a", "a", weight=2)
    graph["c"]["d"]["weight"] = 3
    for partition in itertools.islice(all_partitions(sorted(graph.nodes)), 0, None, 7):
        blocks = {}
        for node, block in partition.items():
            blocks.setdefault(block, set()).add(node)
        expected = nx.community.modularity(graph, list(blocks.values()), weight="weight")
        assert modularity(graph, partition) == pytest.approx(expected)


def test_modularity_of_edgeless_graph_is_zero():
    graph = nx.Graph()
    graph.add_nodes_from("abc")
    assert modularity(graph, {"a": 0, "b": 0, "c": 1}) == 0.0


def test_two_triangles_split_in_two():
    result = louvain(two_triangles(), seed=0)
    assert result.n_clusters == 2
    assert result.roster() == {0: ["a", "b", "c"], 1: ["d", "e", "f"]}
    assert result.modularity == pytest.approx(5 / 14)


def test_clique_stays_together():
    result = louvain(nx.complete_graph(["a", "b", "c", "d"]), seed=3)
    assert result.n_clusters == 1
    assert result.modularity == pytest.approx(0.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_louvain_is_near_the_best_partition(seed):
    graph = nx.Graph()
    graph.add_weighted_edges_from([
        ("a", "b", 3), ("b", "c", 2), ("a", "c", 1), ("c", "d", 1),
        ("d", "e", 4), ("e", "f", 1), ("d", "f", 2), ("f", "g", 1), ("g", "a", 1),
    ])
    best = max(modularity(graph, p) for p in all_partitions(sorted(graph.nodes)))
    result = louvain(graph, seed=seed)
    assert result.modularity == pytest.approx(modularity(graph, result.clusters))
    assert result.modularity >= best - 0.1
    assert set(result.clusters) == set(graph.nodes)


SMALL_GRAPHS = {
    "two-triangles": two_triangles,
    "separate-triangles": lambda: nx.Graph([("a", "b"), ("b", "c"), ("a", "c"), ("d", "e"), ("e", "f"), ("d", "f")]),
    "clique": lambda: nx.complete_graph(["a", "b", "c", "d"]),
    "star": lambda: nx.star_graph(5),
    "barbell": lambda: nx.barbell_graph(4, 0),
    "paired-path": lambda: nx.Graph([
        ("a", "b", {"weight": 5}), ("b", "c", {"weight": 1}), ("c", "d", {"weight": 5}),
        ("d", "e", {"weight": 1}), ("e", "f", {"weight": 5}),
    ]),
}


@pytest.mark.parametrize("name", sorted(SMALL_GRAPHS))
@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_louvain_reaches_the_exact_optimum_on_small_graphs(name, seed):
    graph = SMALL_GRAPHS[name]()
    assert graph.number_of_nodes() <= 8
    best = max(modularity(graph, p) for p in all_partitions(sorted(graph.nodes)))
    assert louvain(graph, seed=seed).modularity == pytest.approx(best)


def planted_blocks(seed):
    graph = nx.stochastic_block_model([20, 20, 20], [[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]], seed=seed)
    truth = {frozenset(block) for block in graph.graph["partition"]}
    return graph, truth


def test_planted_blocks_are_recovered():
    recovered = 0
    for seed in range(20):
        graph, truth = planted_blocks(seed)
        result = louvain(graph, seed=seed)
        found = {frozenset(int(node) for node in members) for members in result.roster().values()}
        recovered += found == truth
    assert recovered >= 19


@pytest.mark.parametrize("make_graph", [nx.karate_club_graph, lambda: planted_blocks(5)[0], two_triangles])
def test_modularity_never_drops_across_sweeps_and_levels(make_graph):
    graph = make_graph()
    result = louvain(graph, seed=2)
    assert len(result.trace) >= 2
    assert all(later >= earlier - 1e-12 for earlier, later in zip(result.trace, result.trace[1:]))
    assert result.trace[0] == pytest.approx(modularity(graph, {node: i for i, node in enumerate(sorted(graph.nodes))}))
    assert result.trace[-1] == pytest.approx(result.modularity)


class FixedOrder:
    def __init__(self, order):
        self.order = order

    def permutation(self, n):
        assert n == len(self.order)
        return np.array(self.order)


def path_level():
    return _Level([{1: 1.0}, {0: 1.0, 2: 1.0}, {1: 1.0}])


def test_tied_candidates_go_to_the_lowest_community_id():
    community, moved = path_level().local_moves(FixedOrder([1, 0, 2]), resolution=1.0)
    assert moved
    assert community == [0, 0, 0]


def test_staying_put_wins_a_tie_with_a_lower_id():
    # node 1 sees equal gain for its own community 1 and for community 0
    community, moved = path_level().local_moves(FixedOrder([2, 1, 0]), resolution=1.0)
    assert moved
    assert community == [1, 1, 1]


def test_louvain_is_deterministic_per_seed():
    graph = nx.karate_club_graph()
    first, second = louvain(graph, seed=7), louvain(graph, seed=7)
    assert first.clusters == second.clusters
    assert first.modularity == second.modularity
    assert first.modularity > 0.35


def test_empty_graph_gives_no_clusters():
    result = louvain(nx.Graph(), seed=0)
    assert result.n_clusters == 0
    assert result.modularity == 0.0


def test_transfer_graph_counts_both_directions_inside_window():
    events = records(
        f"m1,{ts(0)},mint,,a,c1,1,",
        f"t1,{ts(1)},transfer,a,b,c1,1,",
        f"t2,{ts(2)},transfer,b,a,c1,1,",
        f"t3,{ts(3)},transfer,a,c,c1,1,",
        f"t4,{ts(9)},transfer,c,d,c1,1,",
        f"s1,{ts(4)},sale,c,e,c1,1,1.0",
    )
    graph = build_transfer_graph(events, (DAY0, DAY0 + 5))
    assert sorted(graph.nodes) == ["a", "b", "c"]
    assert graph["a"]["b"]["weight"] == 2
    assert graph["a"]["c"]["weight"] == 1


def test_assignment_csv_round_trip_and_singletons(tmp_path):
    assignment = CommunityAssignment({"a": 0, "b": 0, "c": 1}, 0.25, seed=4)
    extended = assignment.with_wallets(["a", "z", "y"])
    assert extended.clusters["y"] == 2 and extended.clusters["z"] == 3
    assert extended.n_clusters == 4

    file = extended.write_csv(str(tmp_path / "communities.csv"))
    restored = CommunityAssignment.read_csv(file)
    assert restored.clusters == extended.clusters
    assert restored.seed == 4
    assert restored.modularity == pytest.approx(0.25)
