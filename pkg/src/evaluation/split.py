"""
Chronological per-collection splits.

Each collection's series is cut into consecutive train, validation and test day
ranges. A sample anchored at day T with step N belongs to a split only when both
T and T + N lie in that split's range, so labels never read across a boundary.
"""
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Optional

from loguru import logger

from src.config.enums import Split
from src.errors import ConfigError, DataValidationError
from src.preprocessor.aggregation import CollectionDailySeries

DayRange = tuple[int, int]


@dataclass(frozen=True)
class SplitRanges:
    train: DayRange
    validation: DayRange
    test: DayRange

    def range_of(self, split: Split) -> DayRange:
        return {Split.TRAIN: self.train, Split.VALIDATION: self.validation, Split.TEST: self.test}[split]

    def split_of(self, day: int) -> Optional[Split]:
        for split in Split:
            first, last = self.range_of(split)
            if first <= day <= last:
                return split
        return None


@dataclass(frozen=True)
class SplitPlan:
    """
    Attributes:
        ranges (Mapping[str, SplitRanges]): Day ranges per usable collection.
        excluded (tuple[str, ...]): Collections too short to split.
        history (int): Window length H the plan was made for.
        step (int): Prediction step N the plan was made for.
    """
    ranges: Mapping[str, SplitRanges]
    excluded: tuple[str, ...] = ()
    history: int = 14
    step: int = 1
    first_days: Mapping[str, int] = field(default_factory=dict)

    @property
    def collections(self) -> list[str]:
        return sorted(self.ranges)

    def sample_split(self, collection: str, day: int, horizon: Optional[int] = None) -> Optional[Split]:
        """
        Split holding both `day` and `day + horizon`, or None.

        The window [day - history, day] must also start inside the series.
        """
        ranges = self.ranges.get(collection)
        if ranges is None or day - self.history < self.first_days.get(collection, day - self.history):
            return None
        horizon = self.step if horizon is None else horizon
        split = ranges.split_of(day)
        if split is None or ranges.split_of(day + horizon) is not split:
            return None
        return split

    def training_window_end(self) -> int:
        """Earliest last training day over all collections."""
        if not self.ranges:
            raise DataValidationError("no collection is long enough to split")
        return min(r.train[1] for r in self.ranges.values())


def split_lengths(n_days: int, train: float, validation: float) -> tuple[int, int, int]:
    n_train = int(math.floor(n_days * train + 0.5))
    n_validation = int(math.floor(n_days * validation + 0.5))
    return n_train, n_validation, n_days - n_train - n_validation


def split_series(
    series: Mapping[str, CollectionDailySeries],
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    history: int = 14,
    step: int = 1,
    min_extra_days: int = 10,
) -> SplitPlan:
    """
    Cut every series chronologically into train, validation and test ranges.

    Series shorter than history + step + `min_extra_days` days are excluded with a warning.

    Raises:
        ConfigError: When a ratio is not positive or the ratios do not sum to 1.
    """
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be positive and sum to 1, got {ratios}")

    ranges: dict[str, SplitRanges] = {}
    first_days: dict[str, int] = {}
    excluded: list[str] = []
    for collection in sorted(series):
        s = series[collection]
        n_days = s.last_day - s.first_day + 1
        if n_days < history + step + min_extra_days:
            logger.warning(f"{collection}: {n_days}-day series too short to split, excluded")
            excluded.append(collection)
            continue
        n_train, n_validation, _ = split_lengths(n_days, ratios[0], ratios[1])
        first = s.first_day
        ranges[collection] = SplitRanges(
            train=(first, first + n_train - 1),
            validation=(first + n_train, first + n_train + n_validation - 1),
            test=(first + n_train + n_validation, s.last_day),
        )
        first_days[collection] = first
    return SplitPlan(ranges, tuple(excluded), history, step, first_days)
