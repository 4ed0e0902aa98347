from bisect import bisect_right
from collections import defaultdict
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field

import pandas as pd
from loguru import logger

from src.config.enums import TxKind
from src.ingest.records import TransactionRecord
from src.preprocessor.aggregation import CollectionDailySeries

HoldingKey = tuple[str, str]  # (wallet, collection)


@dataclass(frozen=True)
class ConsistencyWarning:
    tx_id: str
    reason: str


@dataclass
class OwnershipLedger:
    """
    Day-end holdings replayed from events.

    Holdings are stored as change points per (wallet, collection): a sorted list of
    days on which the day-end count changed and the count from that day on.
    """
    changes: dict[HoldingKey, tuple[list[int], list[int]]] = field(default_factory=dict)
    prices: Mapping[str, CollectionDailySeries] = field(default_factory=dict)
    warnings: list[ConsistencyWarning] = field(default_factory=list)

    def held(self, day: int, wallet: str, collection: str) -> int:
        days, counts = self.changes.get((wallet, collection), ([], []))
        index = bisect_right(days, day)
        return counts[index - 1] if index else 0

    def holdings(self, day: int) -> dict[HoldingKey, int]:
        """Positive day-end holdings of every (wallet, collection)."""
        result: dict[HoldingKey, int] = {}
        for key in self.changes:
            count = self.held(day, *key)
            if count > 0:
                result[key] = count
        return result

    def iter_holdings(self, first_day: int, last_day: int) -> Iterator[tuple[int, dict[HoldingKey, int]]]:
        """Yield (day, positive holdings) for consecutive days, replaying changes incrementally."""
        events: defaultdict[int, list[tuple[HoldingKey, int]]] = defaultdict(list)
        state: dict[HoldingKey, int] = {}
        for key, (days, counts) in self.changes.items():
            for day, count in zip(days, counts):
                if day <= first_day:
                    state[key] = count
                else:
                    events[day].append((key, count))
        state = {key: count for key, count in state.items() if count > 0}
        for day in range(first_day, last_day + 1):
            if day > first_day:
                for key, count in events.get(day, ()):
                    if count > 0:
                        state[key] = count
                    else:
                        state.pop(key, None)
            yield day, dict(state)

    def wallet_totals(self, day: int, holdings: Mapping[HoldingKey, int]) -> dict[str, tuple[int, float]]:
        """
        Total holding count and total asset value (ETH) per wallet.

        Asset value prices each held token at its collection's daily median; a
        collection without a price on `day` contributes zero value.
        """
        totals: dict[str, tuple[int, float]] = {}
        for (wallet, collection), count in sorted(holdings.items()):
            series = self.prices.get(collection)
            price = series.price(day) if series is not None and day in series else 0.0
            held, value = totals.get(wallet, (0, 0.0))
            totals[wallet] = (held + count, value + count * price)
        return totals

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (day, wallet, collection, count)
            for (wallet, collection), (days, counts) in sorted(self.changes.items())
            for day, count in zip(days, counts)
        ]
        return pd.DataFrame(rows, columns=["day", "wallet", "collection", "held_count"])

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, prices: Mapping[str, CollectionDailySeries]) -> "OwnershipLedger":
        changes: dict[HoldingKey, tuple[list[int], list[int]]] = {}
        for day, wallet, collection, count in frame.sort_values("day", kind="stable").itertuples(index=False):
            days, counts = changes.setdefault((str(wallet), str(collection)), ([], []))
            days.append(int(day))
            counts.append(int(count))
        return cls(changes, prices)


def replay_ownership(
    records: Iterable[TransactionRecord],
    prices: Mapping[str, CollectionDailySeries],
) -> OwnershipLedger:
    """
    Replay time-sorted events into day-end holdings.

    Mint, sale and transfer give the token to `to_wallet`; sale, transfer and burn
    take it from its holder. When the holder is not the event's `from_wallet` a
    consistency warning is recorded and the event is applied anyway.
    """
    holder: dict[tuple[str, str], str] = {}
    counts: defaultdict[HoldingKey, int] = defaultdict(int)
    day_end: dict[int, dict[HoldingKey, int]] = defaultdict(dict)
    warnings: list[ConsistencyWarning] = []

    def move(record: TransactionRecord, new_holder: str | None) -> None:
        token_key = record.token_key
        current = holder.get(token_key)
        expected = record.from_wallet
        if current != expected:
            reason = f"token {record.collection}/{record.token} held by {current}, event from {expected}"
            warnings.append(ConsistencyWarning(record.tx_id, reason))
        if current is not None:
            counts[(current, record.collection)] -= 1
            day_end[record.day][(current, record.collection)] = counts[(current, record.collection)]
            del holder[token_key]
        if new_holder is not None:
            holder[token_key] = new_holder
            counts[(new_holder, record.collection)] += 1
            day_end[record.day][(new_holder, record.collection)] = counts[(new_holder, record.collection)]

    for record in records:
        if record.kind is TxKind.BURN:
            move(record, None)
        else:
            move(record, record.to_wallet)

    ledger = OwnershipLedger(prices=prices, warnings=warnings)
    for day in sorted(day_end):
        for key, count in sorted(day_end[day].items()):
            days, values = ledger.changes.setdefault(key, ([], []))
            if values and values[-1] == count:
                continue
            days.append(day)
            values.append(count)
    if warnings:
        logger.warning(f"Ownership replay recorded {len(warnings)} consistency warnings")
    return ledger
