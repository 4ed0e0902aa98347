import os
import random

import numpy as np
import pytest

from src.config.config_definitions import PreprocessConfig
from src.config.enums import EmbeddingSource, TxKind
from src.errors import DataValidationError, MissingArtifactError
from src.ingest.embeddings import fallback_embedding, load_embeddings, resolve_embeddings, write_embeddings
from src.ingest.loader import get_loader_strategy, load_collections, load_rates, parse_transactions
from src.ingest.market import load_market
from src.ingest.schema import ColumnSchema

from tests.conftest import write_market_dir


def test_sale_line_maps_fields():
    records, issues = parse_transactions(["t1,1000,sale,0xA,0xB,c1,42,1.5"])
    assert issues == []
    record = records[0]
    assert record.kind is TxKind.SALE
    assert record.price_eth == 1.5
    assert record.day == 0
    assert record.from_wallet == "0xa"
    assert record.to_wallet == "0xb"


def test_mint_has_no_sender():
    records, issues = parse_transactions(["t2,1000,mint,,0xB,c1,7,"])
    assert issues == []
    assert records[0].kind is TxKind.MINT
    assert records[0].from_wallet is None
    assert records[0].price_eth is None


def test_sale_without_price_is_reported():
    records, issues = parse_transactions(["t3,1000,sale,0xA,0xB,c1,42,"])
    assert records == []
    assert issues[0].line_number == 1
    assert issues[0].reason == "price required for sale"


@pytest.mark.parametrize("line, reason", [
    ("t4,1000,mint,0xA,0xB,c1,7,", "mint must not have from_wallet"),
    ("t5,1000,burn,0xA,0xB,c1,7,", "burn must not have to_wallet"),
    ("t6,1000,transfer,0xA,0xB,c1,7,2.0", "price not allowed for transfer"),
    ("t7,abc,sale,0xA,0xB,c1,7,1.0", "invalid timestamp 'abc'"),
    ("t7,inf,mint,,0xB,c1,8,", "invalid timestamp 'inf'"),
    ("t7,1e400,mint,,0xB,c1,9,", "invalid timestamp '1e400'"),
    ("t7,nan,mint,,0xB,c1,9,", "invalid timestamp 'nan'"),
    ("t8,1000,swap,0xA,0xB,c1,7,1.0", "unknown kind 'swap'"),
    ("t9,1000,sale,0xA,0xB,c1,7", "expected 8 fields, got 7"),
])
def test_malformed_lines_are_reported(line, reason):
    records, issues = parse_transactions([line])
    assert records == []
    assert [i.reason for i in issues] == [reason]


def test_every_nonempty_line_yields_record_or_issue_in_sorted_order():
    lines = [
        "a,300,mint,,w1,c1,1,",
        "b,100,sale,w1,w2,c1,1,2.0",
        "",
        "c,100,sale,w2,w3,c1,1,",
        "d,200,transfer,w2,w3,c1,1,",
        "e,100,burn,w3,,c1,1,",
    ]
    records, issues = parse_transactions(lines)
    assert len(records) + len(issues) == 5
    assert [r.tx_id for r in records] == ["b", "e", "d", "a"]

    shuffled = list(lines)
    random.Random(3).shuffle(shuffled)
    again, _ = parse_transactions(shuffled)
    assert again == records


def test_header_and_jsonl_schemas():
    csv_lines = ["price_eth,tx_id,timestamp,kind,from_wallet,to_wallet,collection,token", "1.5,t1,86400,sale,a,b,c1,1"]
    records, issues = parse_transactions(csv_lines, ColumnSchema.csv_with_header())
    assert issues == []
    assert records[0].day == 1 and records[0].price_eth == 1.5

    jsonl = ['{"tx_id": "t1", "timestamp": 5, "kind": "mint", "from_wallet": null, "to_wallet": "B", '
             '"collection": "C1", "token": "3", "price_eth": null}']
    records, issues = parse_transactions(jsonl, ColumnSchema.jsonl())
    assert issues == []
    assert records[0].to_wallet == "b" and records[0].collection == "c1"


def test_unknown_file_type_is_rejected():
    with pytest.raises(DataValidationError):
        get_loader_strategy("transactions.parquet")


def test_embedding_file(tmp_path):
    file = tmp_path / "emb.csv"
    file.write_text("dim=4\nc1,1,2,3,4\n")
    table = load_embeddings(str(file), 4)
    assert len(table) == 1
    assert table.dim == 4
    assert table.source is EmbeddingSource.FILE
    np.testing.assert_array_equal(table.vector("c1"), [1.0, 2.0, 3.0, 4.0])


def test_embedding_row_length_names_row(tmp_path):
    file = tmp_path / "emb.csv"
    file.write_text("dim=4\nc1,1,2,3\n")
    with pytest.raises(DataValidationError, match="row 2"):
        load_embeddings(str(file), 4)


def test_embedding_duplicate_and_dim_mismatch(tmp_path):
    file = tmp_path / "emb.csv"
    file.write_text("dim=2\nc1,1,2\nc1,3,4\n")
    with pytest.raises(DataValidationError, match="duplicate id"):
        load_embeddings(str(file), 2)
    with pytest.raises(DataValidationError, match="does not match"):
        load_embeddings(str(file), 3)


def test_fallback_embedding_is_deterministic_unit_norm():
    first = fallback_embedding("c1", 8)
    second = fallback_embedding("c1", 8)
    assert first.tobytes() == second.tobytes()
    ids = [f"c{i}" for i in range(50)]
    vectors = [fallback_embedding(key, 8) for key in ids]
    for vector in vectors:
        assert abs(np.linalg.norm(vector) - 1.0) < 1e-9
    assert len({v.tobytes() for v in vectors}) == len(ids)
    assert not np.array_equal(fallback_embedding("c1", 8), fallback_embedding("c2", 8))


def test_resolve_embeddings_fills_missing_ids(tmp_path):
    file = tmp_path / "emb.csv"
    file.write_text("dim=2\nc1,1,0\n")
    table = resolve_embeddings(str(file), ["c1", "c2"], 2)
    np.testing.assert_array_equal(table.vector("c1"), [1.0, 0.0])
    np.testing.assert_allclose(table.vector("c2"), fallback_embedding("c2", 2))

    missing = resolve_embeddings(str(tmp_path / "none.csv"), ["c1"], 2)
    assert missing.source is EmbeddingSource.HASH_FALLBACK

    out = tmp_path / "written.csv"
    write_embeddings(str(out), table)
    assert load_embeddings(str(out), 2).vectors.keys() == table.vectors.keys()


def test_rates_fill_gaps(tmp_path):
    file = tmp_path / "rates.csv"
    file.write_text("day,eth_usd\n10,100\n12,300\n")
    rates = load_rates(str(file))
    assert rates.first_day == 10
    assert rates.values == (100.0, 200.0, 300.0)
    assert rates.rate(11) == 200.0
    assert rates.rate(99) == 300.0


def test_rates_must_be_positive(tmp_path):
    file = tmp_path / "rates.csv"
    file.write_text("day,eth_usd\n10,0\n")
    with pytest.raises(DataValidationError):
        load_rates(str(file))


def test_collections_and_properties(tmp_path):
    (tmp_path / "collections.csv").write_text("collection,total_supply\nC1,4\n")
    (tmp_path / "properties.csv").write_text("collection,token,property_key\nc1,1,hat\nc1,1,eyes\nc1,2,hat\n")
    metas = load_collections(str(tmp_path / "collections.csv"), str(tmp_path / "properties.csv"))
    assert metas["c1"].total_supply == 4
    assert metas["c1"].token_properties["1"] == frozenset({"hat", "eyes"})

    (tmp_path / "properties.csv").write_text("collection,token,property_key\nc9,1,hat\n")
    with pytest.raises(DataValidationError, match="unknown collections"):
        load_collections(str(tmp_path / "collections.csv"), str(tmp_path / "properties.csv"))


def test_load_market(tmp_path, trading_lines):
    directory = write_market_dir(str(tmp_path / "data"), trading_lines + ["bad,line"], {"c1": 10, "c2": 6}, 18628, 12)
    market = load_market(directory, PreprocessConfig(embedding_dim=4))
    assert len(market.records) == len(trading_lines)
    assert len(market.issues) == 1
    assert market.first_day == 18628
    assert set(market.collections) == {"c1", "c2"}
    assert "9" in market.collections["c1"].token_properties
    assert market.visual.source is EmbeddingSource.HASH_FALLBACK
    assert market.visual.dim == 4

    os.remove(os.path.join(directory, "rates.csv"))
    with pytest.raises(MissingArtifactError, match="rates.csv"):
        load_market(directory)
