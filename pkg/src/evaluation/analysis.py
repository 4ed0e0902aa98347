"""
Market and result analyses used by the report.

Functions:
    - `collection_breakdown`: Per-collection ACC/MCC of several models next to trading activity.
    - `activity_distribution`: Per-wallet and per-token transaction counts with fitted power-law exponents.
    - `fit_power_law_exponent`: Discrete power-law exponent by the approximate maximum-likelihood estimator.
    - `power_law_ks_distance`: Kolmogorov-Smirnov distance between counts and a discrete power law.
"""
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy.special import zeta

from src.errors import DataValidationError
from src.evaluation.metrics import metrics_classification
from src.ingest.records import TransactionRecord
from src.model.datasets import CollectionSample


def collection_breakdown(
    samples: Sequence[CollectionSample],
    predictions: Mapping[str, npt.ArrayLike],
    records: Iterable[TransactionRecord],
) -> pd.DataFrame:
    """
    Per-collection metrics of every model in `predictions`.

    Parameters:
        samples (Sequence[CollectionSample]): Evaluation samples.
        predictions (Mapping[str, ArrayLike]): Model name to probabilities aligned with `samples`.
        records (Iterable[TransactionRecord]): Market records, for transaction counts.

    Returns:
        pd.DataFrame: One row per collection, sorted by transaction count, with
        columns collection, transactions, n_samples and `<model>_acc`, `<model>_mcc`.
    """
    transactions = Counter(record.collection for record in records)
    labels = np.asarray([s.label for s in samples])
    collections = np.asarray([s.collection for s in samples])
    arrays = {name: np.asarray(p, dtype=np.float64) for name, p in predictions.items()}

    rows = []
    for collection in sorted(set(collections)):
        mask = collections == collection
        row = {"collection": collection, "transactions": transactions[collection], "n_samples": int(mask.sum())}
        for name, probabilities in arrays.items():
            acc, mcc = metrics_classification(probabilities[mask], labels[mask])
            row[f"{name}_acc"] = acc
            row[f"{name}_mcc"] = mcc
        rows.append(row)
    frame = pd.DataFrame(rows)
    if frame.empty:
        return frame
    return frame.sort_values(["transactions", "collection"], kind="stable").reset_index(drop=True)


def fit_power_law_exponent(counts: npt.ArrayLike, xmin: int = 1) -> float:
    """
    alpha = 1 + n / sum(ln(x / (xmin - 1/2))) over counts x >= xmin.

    Raises:
        DataValidationError: When no count reaches `xmin`.
    """
    x = np.asarray(counts, dtype=np.float64)
    x = x[x >= xmin]
    if x.size == 0:
        raise DataValidationError(f"no count reaches xmin={xmin}")
    return float(1.0 + x.size / np.sum(np.log(x / (xmin - 0.5))))


def power_law_ks_distance(counts: npt.ArrayLike, exponent: float, xmin: int = 1) -> float:
    """Largest gap between the empirical CDF of counts >= xmin and the discrete power-law CDF."""
    x = np.asarray(counts, dtype=np.int64)
    x = np.sort(x[x >= xmin])
    if x.size == 0:
        raise DataValidationError(f"no count reaches xmin={xmin}")
    support = np.arange(xmin, x[-1] + 1)
    empirical = np.searchsorted(x, support, side="right") / x.size
    model = 1.0 - zeta(exponent, support + 1) / zeta(exponent, xmin)
    return float(np.max(np.abs(empirical - model)))


@dataclass(frozen=True)
class ActivityDistribution:
    """
    Attributes:
        wallet_counts (pd.Series): Transactions per wallet, as sender or receiver.
        token_counts (pd.Series): Transactions per (collection, token).
        wallet_exponent (float): Fitted exponent of the wallet counts.
        token_exponent (float): Fitted exponent of the token counts.
    """
    wallet_counts: pd.Series
    token_counts: pd.Series
    wallet_exponent: float
    token_exponent: float

    def to_frame(self) -> pd.DataFrame:
        """Count histogram in long form: kind, count, frequency."""
        frames = []
        for kind, counts in (("wallet", self.wallet_counts), ("token", self.token_counts)):
            histogram = counts.value_counts().sort_index()
            frames.append(pd.DataFrame({"kind": kind, "count": histogram.index, "frequency": histogram.to_numpy()}))
        return pd.concat(frames, ignore_index=True)


def activity_distribution(records: Iterable[TransactionRecord], xmin: int = 1) -> ActivityDistribution:
    wallets: Counter[str] = Counter()
    tokens: Counter[str] = Counter()
    for record in records:
        for wallet in {record.from_wallet, record.to_wallet} - {None}:
            wallets[wallet] += 1
        tokens[f"{record.collection}/{record.token}"] += 1
    wallet_counts = pd.Series(dict(sorted(wallets.items())), dtype=np.int64)
    token_counts = pd.Series(dict(sorted(tokens.items())), dtype=np.int64)
    return ActivityDistribution(
        wallet_counts,
        token_counts,
        fit_power_law_exponent(wallet_counts.to_numpy(), xmin),
        fit_power_law_exponent(token_counts.to_numpy(), xmin),
    )
