from collections.abc import Sequence

import numpy as np
import numpy.typing as npt

from src.ingest.records import TransactionRecord


def box_whisker_fences(prices: npt.ArrayLike, k: float = 1.5) -> tuple[float, float]:
    """
    Lower and upper fences Q1 - k*IQR and Q3 + k*IQR.

    Quartiles interpolate linearly between order statistics at position (n - 1) * q.
    """
    values = np.asarray(prices, dtype=np.float64)
    q1, q3 = np.quantile(values, [0.25, 0.75], method="linear")
    iqr = q3 - q1
    return float(q1 - k * iqr), float(q3 + k * iqr)


def box_whisker_filter(prices: Sequence[float], k: float = 1.5) -> tuple[list[int], list[int]]:
    """
    Split a time-ordered price list into retained and flagged indices.

    A price is flagged when it lies strictly outside the fences; values on a
    fence are retained.
    """
    if len(prices) == 0:
        raise ValueError("box_whisker_filter needs at least one price")
    lower, upper = box_whisker_fences(prices, k)
    retained: list[int] = []
    flagged: list[int] = []
    for index, price in enumerate(prices):
        if price < lower or price > upper:
            flagged.append(index)
        else:
            retained.append(index)
    return retained, flagged


def flag_outlier_sales(
    sales: Sequence[TransactionRecord],
    k: float = 1.5,
    half_window: int = 3,
    min_samples: int = 4,
) -> set[str]:
    """
    Apply the Box-Whisker rule to one collection's sales over a centred window of
    +-`half_window` days. Windows with fewer than `min_samples` sales flag nothing.

    Parameters:
    - sales (Sequence[TransactionRecord]): Time-ordered, wash-free sales of one collection.

    Returns:
    - set[str]: tx_ids of flagged sales.
    """
    flagged: set[str] = set()
    days = np.asarray([sale.day for sale in sales], dtype=np.int64)
    prices = [sale.price_eth for sale in sales]
    lo = hi = 0
    for index, sale in enumerate(sales):
        day = days[index]
        while days[lo] < day - half_window:
            lo += 1
        while hi < len(sales) and days[hi] <= day + half_window:
            hi += 1
        if hi - lo < min_samples:
            continue
        _, window_flags = box_whisker_filter(prices[lo:hi], k)
        if index - lo in window_flags:
            flagged.add(sale.tx_id)
    return flagged
