import os

import pytest

from src.config.config_definitions import SyntheticSpec
from src.ingest.loader import parse_transactions
from src.ingest.records import SECONDS_PER_DAY, TransactionRecord

DAY0: int = 18628


def ts(day: int, second: int = 0) -> int:
    """Timestamp `second` seconds into market day `day` (relative to DAY0)."""
    return (DAY0 + day) * SECONDS_PER_DAY + second


def records(*lines: str) -> list[TransactionRecord]:
    parsed, issues = parse_transactions(lines)
    assert not issues, issues
    return parsed


def write_market_dir(directory: str, transactions: list[str], collections: dict[str, int], first_day: int, n_days: int) -> str:
    """Minimal ingest-format directory: transactions.csv, rates.csv, collections.csv."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "transactions.csv"), "w", encoding="utf-8") as f:
        f.write("tx_id,timestamp,kind,from_wallet,to_wallet,collection,token,price_eth\n")
        f.write("\n".join(transactions) + "\n")
    with open(os.path.join(directory, "rates.csv"), "w", encoding="utf-8") as f:
        f.write("day,eth_usd\n")
        for day in range(first_day, first_day + n_days):
            f.write(f"{day},2000.0\n")
    with open(os.path.join(directory, "collections.csv"), "w", encoding="utf-8") as f:
        f.write("collection,total_supply\n")
        for collection, supply in collections.items():
            f.write(f"{collection},{supply}\n")
    return directory


@pytest.fixture
def tiny_spec() -> SyntheticSpec:
    return SyntheticSpec(
        n_collections=3,
        n_wallets=60,
        n_days=60,
        tokens_per_collection=25,
        properties_per_collection=4,
        smart_wallets=5,
        wash_rings=3,
        ring_size=2,
        ring_cycles=1,
        embedding_dim=4,
        seed=11,
    )


@pytest.fixture
def trading_lines() -> list[str]:
    """Two collections traded over ten days, one wash ring on c1 token 9."""
    lines = []
    tx = 0

    def add(day: int, kind: str, src: str, dst: str, collection: str, token: str, price: str = "") -> None:
        nonlocal tx
        lines.append(f"t{tx:04d},{ts(day, tx)},{kind},{src},{dst},{collection},{token},{price}")
        tx += 1

    for token in range(6):
        add(0, "mint", "", f"w{token}", "c1", str(token))
        add(0, "mint", "", f"w{token}", "c2", str(token))
    for day in range(1, 10):
        for token in range(3):
            seller = f"w{token}" if day == 1 else f"b{day - 1}_{token}"
            add(day, "sale", seller, f"b{day}_{token}", "c1", str(token), f"{1.0 + 0.1 * day + 0.01 * token:.2f}")
            add(day, "sale", f"w{token + 3}" if day == 1 else f"x{day - 1}_{token}", f"x{day}_{token}", "c2", str(token + 3), f"{2.0 + 0.05 * day:.2f}")
    add(2, "mint", "", "ra", "c1", "9")
    add(2, "sale", "ra", "rb", "c1", "9", "50")
    add(3, "sale", "rb", "ra", "c1", "9", "60")
    add(5, "transfer", "w0", "w9", "c2", "0")
    add(6, "burn", "w4", "", "c1", "4")
    return lines
