import numpy as np
import pandas as pd
import pytest

from src.config.config_definitions import PreprocessConfig
from src.config.enums import Relation
from src.errors import DataValidationError
from src.graph.schema import FeatureSchema, fit_schema
from src.graph.snapshot import build_snapshot, build_snapshots, node_universe
from src.graph.store import export_snapshots, load_snapshots, save_snapshots
from src.ingest.market import load_market
from src.ingest.records import EthUsdRates
from src.preprocessor.aggregation import aggregate_daily
from src.preprocessor.ownership import replay_ownership
from src.preprocessor.pipeline import clean_market

from tests.conftest import DAY0, records, ts, write_market_dir

RATES = EthUsdRates(DAY0, (2000.0,) * 10)


@pytest.fixture
def small_day():
    """Two mints on day 0; on day 1 a sale, a transfer and a wash sale back to the seller."""
    events = records(
        f"m1,{ts(0)},mint,,a,c1,1,",
        f"m2,{ts(0, 1)},mint,,b,c1,2,",
        f"s1,{ts(1)},sale,a,b,c1,1,2.0",
        f"t1,{ts(1, 1)},transfer,b,c,c1,2,",
        f"s2,{ts(1, 2)},sale,b,a,c1,1,3.0",
    )
    retained = [r for r in events if r.tx_id == "s1"]
    series = {"c1": aggregate_daily("c1", retained, events, RATES, (DAY0, DAY0 + 1), frozenset({"s2"}))}
    ledger = replay_ownership(events, series)
    universe = node_universe(events, ["c1"], (DAY0, DAY0 + 1))
    static = np.zeros((1, 3))
    return events, series, ledger, universe, static


def edge_pairs(snapshot, relation):
    edge_set = snapshot.edges[relation]
    return list(zip(edge_set.src.tolist(), edge_set.dst.tolist()))


def test_node_universe_respects_window():
    events = records(f"m1,{ts(0)},mint,,a,c1,1,", f"m2,{ts(5)},mint,,late,c1,2,")
    universe = node_universe(events, ["c2", "c1"], (DAY0, DAY0 + 2))
    assert universe.wallets == ("a",)
    assert universe.collections == ("c1", "c2")
    assert universe.collection_index["c1"] == 1
    assert universe.collection_position("c2") == 1
    assert universe.n_nodes == 3


def test_snapshot_edges_and_features(small_day):
    events, series, ledger, universe, static = small_day
    day1 = [r for r in events if r.day == DAY0 + 1]
    snapshot = build_snapshot(DAY0 + 1, day1, series, ledger, universe, static, frozenset({"s2"}))
    a, b, c, c1 = 0, 1, 2, 3

    assert snapshot.collection_present.tolist() == [True]
    assert edge_pairs(snapshot, Relation.SALE_WW) == [(a, b)]
    assert snapshot.edges[Relation.SALE_WW].features.tolist() == [[2.0]]
    assert edge_pairs(snapshot, Relation.SALE_FROM) == [(c1, a)]
    assert edge_pairs(snapshot, Relation.SALE_TO) == [(c1, b)]
    assert edge_pairs(snapshot, Relation.TRANSFER_WW) == [(b, c)]
    assert edge_pairs(snapshot, Relation.TRANSFER_OUT) == [(c1, b)]
    assert edge_pairs(snapshot, Relation.TRANSFER_IN) == [(c1, c)]
    assert edge_pairs(snapshot, Relation.HOLD) == [(c1, a), (c1, c)]
    assert snapshot.edges[Relation.HOLD].features.tolist() == [[1.0], [1.0]]
    assert len(snapshot.edges[Relation.MINT]) == 0
    assert snapshot.n_edges() == 8

    # wash sales still count toward activity
    assert snapshot.wallet_features[a].tolist() == [0, 2, 0, 0, 1, 2.0]
    assert snapshot.wallet_features[b].tolist() == [0, 2, 1, 0, 0, 0.0]
    assert snapshot.wallet_features[c].tolist() == [0, 0, 1, 0, 1, 2.0]
    assert snapshot.collection_dynamic[0].tolist() == [2.0, 0, 2, 1, 0, 2000.0, 2.0]


def test_absent_collection_loses_edges(small_day):
    events, series, ledger, universe, static = small_day
    day0 = [r for r in events if r.day == DAY0]
    snapshot = build_snapshot(DAY0, day0, series, ledger, universe, static)
    assert snapshot.collection_present.tolist() == [False]
    assert snapshot.n_edges() == 0
    assert not snapshot.collection_dynamic.any()
    assert snapshot.wallet_features[:2, 0].tolist() == [1, 1]
    assert snapshot.wallet_features[:2, 4].tolist() == [1, 1]
    assert snapshot.wallet_features[:2, 5].tolist() == [0.0, 0.0]


@pytest.fixture
def market_snapshots(tmp_path, trading_lines):
    directory = write_market_dir(str(tmp_path / "data"), trading_lines, {"c1": 10, "c2": 6}, DAY0, 12)
    config = PreprocessConfig(embedding_dim=4)
    market = load_market(directory, config)
    clean = clean_market(market, config)
    window = (market.first_day, market.first_day + 5)
    universe = node_universe(market.records, clean.series, window)
    snapshots = build_snapshots(market, clean, universe, (market.first_day, market.last_day))
    return market, universe, snapshots


def test_every_day_has_every_node(market_snapshots):
    market, universe, snapshots = market_snapshots
    assert sorted(snapshots) == list(range(market.first_day, market.last_day + 1))
    for snapshot in snapshots.values():
        assert snapshot.wallet_features.shape == (universe.n_wallets, 6)
        assert snapshot.collection_dynamic.shape == (2, 7)
        assert snapshot.collection_static.shape == (2, 9)
        for relation, edge_set in snapshot.edges.items():
            assert edge_set.features.shape == (len(edge_set), 1 if relation.has_feature else 0)
            if len(edge_set):
                assert edge_set.src.max() < universe.n_nodes and edge_set.dst.max() < universe.n_nodes
    # wallets first active after the window are not nodes
    assert "b9_0" not in universe.wallet_index


def test_schema_is_fitted_on_training_days_only(market_snapshots):
    market, _, snapshots = market_snapshots
    train = range(market.first_day, market.first_day + 5)
    schema = fit_schema(train, snapshots, 4)

    changed = dict(snapshots)
    last = snapshots[market.last_day]
    changed[market.last_day] = last.replace(wallet_features=last.wallet_features + 1000.0)
    again = fit_schema(train, changed, 4)
    np.testing.assert_array_equal(schema.wallet.mean, again.wallet.mean)
    np.testing.assert_array_equal(schema.wallet.std, again.wallet.std)

    stacked = np.concatenate([schema.apply(snapshots[day]).wallet_features for day in train])
    np.testing.assert_allclose(stacked.mean(axis=0), 0.0, atol=1e-6)

    with pytest.raises(DataValidationError, match="empty training split"):
        fit_schema([market.last_day + 50], snapshots, 4)


def test_schema_apply_and_dict_round_trip(market_snapshots):
    market, _, snapshots = market_snapshots
    schema = fit_schema(range(market.first_day, market.first_day + 5), snapshots, 4)
    restored = FeatureSchema.from_dict(schema.to_dict())
    for day in (market.first_day, market.last_day):
        first, second = schema.apply(snapshots[day]), restored.apply(snapshots[day])
        np.testing.assert_array_equal(first.wallet_features, second.wallet_features)
        np.testing.assert_array_equal(first.collection_dynamic, second.collection_dynamic)
        assert not first.collection_dynamic[~first.collection_present].any()

    # embeddings pass through unscaled
    static = schema.apply(snapshots[market.first_day]).collection_static
    np.testing.assert_array_equal(static[:, :8], snapshots[market.first_day].collection_static[:, :8])

    assert schema.columns("wallet.sale_count") == ("wallet", [1])
    assert schema.columns("collection.daily_price") == ("collection_dynamic", [0])
    assert schema.columns("collection.textual_embedding") == ("collection_static", [4, 5, 6, 7])
    assert schema.columns("collection.total_supply") == ("collection_static", [8])
    with pytest.raises(KeyError):
        schema.columns("wallet.unknown")


def test_store_round_trip_and_export(tmp_path, market_snapshots):
    _, universe, snapshots = market_snapshots
    file = save_snapshots(str(tmp_path / "snapshots.npz"), snapshots, universe)
    loaded, loaded_universe = load_snapshots(file)
    assert loaded_universe.wallets == universe.wallets
    assert loaded_universe.collections == universe.collections
    assert sorted(loaded) == sorted(snapshots)
    for day, snapshot in snapshots.items():
        np.testing.assert_array_equal(loaded[day].wallet_features, snapshot.wallet_features)
        np.testing.assert_array_equal(loaded[day].collection_present, snapshot.collection_present)
        for relation in Relation:
            np.testing.assert_array_equal(loaded[day].edges[relation].src, snapshot.edges[relation].src)
            np.testing.assert_array_equal(loaded[day].edges[relation].features, snapshot.edges[relation].features)

    again = save_snapshots(str(tmp_path / "again.npz"), loaded, loaded_universe)
    with open(file, "rb") as f1, open(again, "rb") as f2:
        assert f1.read() == f2.read()

    day = min(snapshots) + 1
    files = export_snapshots(str(tmp_path / "export"), [day, 10**6], snapshots, universe)
    assert len(files) == 1
    frame = pd.read_csv(files[0])
    assert list(frame.columns) == ["relation", "src", "dst", "feature"]
    assert len(frame) == snapshots[day].n_edges()
