"""
Sale cleaning, daily aggregation, rarity and ownership replay for a whole market.
"""
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping

import pandas as pd
from loguru import logger
from tqdm import tqdm

from src.config.config_definitions import PreprocessConfig
from src.config.enums import FlagReason, TxKind
from src.errors import DataValidationError
from src.ingest.records import MarketData, TransactionRecord
from src.preprocessor.aggregation import SERIES_COLUMNS, CollectionDailySeries, aggregate_daily
from src.preprocessor.outliers import flag_outlier_sales
from src.preprocessor.ownership import OwnershipLedger, replay_ownership
from src.preprocessor.rarity import RarityTable, rarity_scores
from src.preprocessor.wash_sales import detect_wash_sales


@dataclass(frozen=True)
class CleanMarket:
    """
    Output of preprocessing.

    Attributes:
        flags (Mapping[str, FlagReason]): Removed sales by tx_id.
        series (Mapping[str, CollectionDailySeries]): Daily series of every priceable collection.
        rarity (Mapping[str, RarityTable]): Rarity tables per collection.
        ledger (OwnershipLedger): Replayed day-end holdings.
    """
    flags: Mapping[str, FlagReason]
    series: Mapping[str, CollectionDailySeries]
    rarity: Mapping[str, RarityTable]
    ledger: OwnershipLedger

    def is_retained_sale(self, record: TransactionRecord) -> bool:
        return record.kind is TxKind.SALE and record.tx_id not in self.flags

    def wash_ids(self) -> set[str]:
        return {tx_id for tx_id, reason in self.flags.items() if reason is FlagReason.WASH}

    def flags_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            sorted((tx_id, reason.value) for tx_id, reason in self.flags.items()),
            columns=["tx_id", "reason"],
        )

    def series_frame(self) -> pd.DataFrame:
        frames = []
        for collection in sorted(self.series):
            frame = self.series[collection].frame.reset_index()
            frame.insert(0, "collection", collection)
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)

    def rarity_frame(self) -> pd.DataFrame:
        rows = [
            (collection, token, score)
            for collection in sorted(self.rarity)
            for token, score in sorted(self.rarity[collection].token_scores.items())
        ]
        return pd.DataFrame(rows, columns=["collection", "token", "rarity"])


def clean_market(market: MarketData, config: PreprocessConfig = PreprocessConfig()) -> CleanMarket:
    """
    Run wash detection, outlier filtering, daily aggregation, rarity and ownership replay.
    """
    records = market.records
    date_range = (market.first_day, market.last_day)

    wash = detect_wash_sales(records)
    logger.info(f"Flagged {len(wash)} wash sales")
    flags: dict[str, FlagReason] = dict.fromkeys(wash, FlagReason.WASH)

    by_collection: defaultdict[str, list[TransactionRecord]] = defaultdict(list)
    for record in records:
        by_collection[record.collection].append(record)

    series: dict[str, CollectionDailySeries] = {}
    for collection in tqdm(sorted(by_collection), desc="aggregate"):
        collection_records = by_collection[collection]
        sales = [r for r in collection_records if r.kind is TxKind.SALE and r.tx_id not in wash]
        outliers = flag_outlier_sales(
            sales, config.box_whisker_k, config.outlier_half_window, config.outlier_min_samples
        )
        flags.update(dict.fromkeys(outliers, FlagReason.OUTLIER))
        retained = [sale for sale in sales if sale.tx_id not in outliers]
        flagged_ids = frozenset(wash | outliers)
        try:
            series[collection] = aggregate_daily(
                collection, retained, collection_records, market.rates, date_range, flagged_ids
            )
        except DataValidationError as e:
            logger.warning(f"Skipping collection: {e}")

    logger.info(f"Flagged {len(flags) - len(wash)} outlier sales, aggregated {len(series)} collections")

    rarity = {collection: rarity_scores(meta) for collection, meta in market.collections.items()}
    ledger = replay_ownership(records, series)
    return CleanMarket(flags, series, rarity, ledger)


def series_from_frame(frame: pd.DataFrame) -> dict[str, CollectionDailySeries]:
    result: dict[str, CollectionDailySeries] = {}
    for collection, group in frame.groupby("collection", sort=True):
        collection_frame = group.set_index("day")[list(SERIES_COLUMNS)].copy()
        collection_frame["interpolated"] = collection_frame["interpolated"].astype(bool)
        result[str(collection)] = CollectionDailySeries(str(collection), collection_frame)
    return result


def load_clean_market(
    series_frame: pd.DataFrame,
    flags_frame: pd.DataFrame,
    ledger_frame: pd.DataFrame,
    market: MarketData,
) -> CleanMarket:
    """Rebuild a CleanMarket from persisted preprocess outputs."""
    series = series_from_frame(series_frame)
    flags = {str(tx_id): FlagReason(reason) for tx_id, reason in flags_frame.itertuples(index=False)}
    rarity = {collection: rarity_scores(meta) for collection, meta in market.collections.items()}
    ledger = OwnershipLedger.from_frame(ledger_frame, series)
    return CleanMarket(flags, series, rarity, ledger)
