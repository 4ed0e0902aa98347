from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np
import pandas as pd

from src.config.enums import TxKind
from src.errors import DataValidationError
from src.ingest.records import EthUsdRates, TransactionRecord

SERIES_COLUMNS: tuple[str, ...] = (
    "median_price_eth", "interpolated", "mint_count", "sale_count", "transfer_count",
    "burn_count", "sale_volume_eth", "eth_usd", "flagged_sale_count",
)
COUNT_COLUMNS: dict[TxKind, str] = {
    TxKind.MINT: "mint_count",
    TxKind.SALE: "sale_count",
    TxKind.TRANSFER: "transfer_count",
    TxKind.BURN: "burn_count",
}


@dataclass(frozen=True)
class CollectionDailySeries:
    """
    Daily rows of one collection, indexed by day without gaps.

    `sale_count` and `sale_volume_eth` describe retained sales only, so a row is
    interpolated exactly when it has no retained sale. `flagged_sale_count`
    counts wash and outlier sales of the day.
    """
    collection: str
    frame: pd.DataFrame

    @property
    def first_day(self) -> int:
        return int(self.frame.index[0])

    @property
    def last_day(self) -> int:
        return int(self.frame.index[-1])

    def __contains__(self, day: int) -> bool:
        return self.first_day <= day <= self.last_day

    def price(self, day: int) -> float:
        return float(self.frame.at[day, "median_price_eth"])

    @property
    def prices(self) -> np.ndarray:
        return self.frame["median_price_eth"].to_numpy(dtype=np.float64)

    def validate(self) -> None:
        """Raise DataValidationError when a series invariant is broken."""
        days = self.frame.index.to_numpy()
        if len(days) == 0 or not np.array_equal(days, np.arange(days[0], days[0] + len(days))):
            raise DataValidationError(f"{self.collection}: series has day gaps")
        interpolated = self.frame["interpolated"].to_numpy(dtype=bool)
        if (self.frame["sale_count"].to_numpy()[interpolated] != 0).any():
            raise DataValidationError(f"{self.collection}: interpolated row with sales")
        priced = ~interpolated
        if (self.frame["median_price_eth"].to_numpy()[priced] < 0).any():
            raise DataValidationError(f"{self.collection}: negative median price")


def daily_median(prices: Sequence[float]) -> float:
    """Median with the mean of both central order statistics for even counts."""
    return float(np.median(np.asarray(prices, dtype=np.float64)))


def fill_price_gaps(days: np.ndarray, priced_days: np.ndarray, medians: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Interpolate interior gaps linearly and carry the last median forward.

    Returns:
    - tuple[np.ndarray, np.ndarray]: prices for `days` and the interpolated mask.
    """
    prices = np.interp(days, priced_days, medians)
    interpolated = ~np.isin(days, priced_days)
    return prices, interpolated


def aggregate_daily(
    collection: str,
    retained_sales: Iterable[TransactionRecord],
    records: Iterable[TransactionRecord],
    rates: EthUsdRates,
    date_range: tuple[int, int],
    flagged_tx_ids: frozenset[str] = frozenset(),
) -> CollectionDailySeries:
    """
    Aggregate one collection's cleaned sales into a gap-free daily series.

    The series starts at the first retained sale day and ends at `date_range[1]`.

    Parameters:
    - retained_sales: Sales left after wash and outlier removal.
    - records: All transactions of the collection, used for event counts.
    - rates: Daily ETH-USD rates.
    - date_range: (first_day, last_day) of the market.
    - flagged_tx_ids: Removed sales, counted in `flagged_sale_count`.

    Raises:
    - DataValidationError: When the collection has no retained sale.
    """
    prices_by_day: defaultdict[int, list[float]] = defaultdict(list)
    for sale in retained_sales:
        if date_range[0] <= sale.day <= date_range[1]:
            prices_by_day[sale.day].append(sale.price_eth)
    if not prices_by_day:
        raise DataValidationError(f"{collection}: no priceable days")

    priced_days = np.asarray(sorted(prices_by_day), dtype=np.int64)
    medians = np.asarray([daily_median(prices_by_day[day]) for day in priced_days])
    days = np.arange(priced_days[0], date_range[1] + 1, dtype=np.int64)
    prices, interpolated = fill_price_gaps(days, priced_days, medians)

    frame = pd.DataFrame(0, index=pd.Index(days, name="day"), columns=list(SERIES_COLUMNS))
    frame["median_price_eth"] = prices
    frame["interpolated"] = interpolated
    frame["sale_volume_eth"] = 0.0
    frame["eth_usd"] = [rates.rate(int(day)) for day in days]

    for day, day_prices in prices_by_day.items():
        frame.at[day, "sale_count"] = len(day_prices)
        frame.at[day, "sale_volume_eth"] = float(np.sum(day_prices))

    for record in records:
        if record.day < days[0] or record.day > days[-1]:
            continue
        if record.kind is TxKind.SALE:
            if record.tx_id in flagged_tx_ids:
                frame.at[record.day, "flagged_sale_count"] += 1
            continue
        frame.at[record.day, COUNT_COLUMNS[record.kind]] += 1

    series = CollectionDailySeries(collection, frame)
    series.validate()
    return series
