import json
import os
from abc import ABC, abstractmethod
from collections.abc import Iterable, Mapping
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger

from src.config.enums import TxKind
from src.errors import DataValidationError
from src.ingest.records import CollectionMeta, EthUsdRates, ParseIssue, TransactionRecord
from src.ingest.schema import ColumnSchema, RecordFormat, TRANSACTION_COLUMNS


class _LineError(ValueError):
    pass


def normalize_id(value: str) -> str:
    """Ids are opaque strings compared case-insensitively."""
    return value.strip().lower()


def _optional_id(value: Optional[str]) -> Optional[str]:
    if value is None:
        return None
    value = normalize_id(str(value))
    return value or None


def build_record(fields: Mapping[str, Optional[str]]) -> TransactionRecord:
    """
    Validate one row of raw fields and turn it into a record.

    Raises:
        _LineError: With the reason the row violates the data model.
    """
    tx_id = _optional_id(fields.get("tx_id"))
    if tx_id is None:
        raise _LineError("tx_id required")

    raw_timestamp = str(fields.get("timestamp") or "").strip()
    try:
        value = float(raw_timestamp)
        if not np.isfinite(value):
            raise ValueError(raw_timestamp)
        timestamp = int(value)
    except (ValueError, OverflowError) as e:
        raise _LineError(f"invalid timestamp '{raw_timestamp}'") from e
    if timestamp < 0:
        raise _LineError("timestamp must be nonnegative")

    raw_kind = str(fields.get("kind") or "").strip().lower()
    try:
        kind = TxKind(raw_kind)
    except ValueError as e:
        raise _LineError(f"unknown kind '{raw_kind}'") from e

    from_wallet = _optional_id(fields.get("from_wallet"))
    to_wallet = _optional_id(fields.get("to_wallet"))
    if kind is TxKind.MINT and from_wallet is not None:
        raise _LineError("mint must not have from_wallet")
    if kind is not TxKind.MINT and from_wallet is None:
        raise _LineError(f"from_wallet required for {kind.value}")
    if kind is TxKind.BURN and to_wallet is not None:
        raise _LineError("burn must not have to_wallet")
    if kind is not TxKind.BURN and to_wallet is None:
        raise _LineError(f"to_wallet required for {kind.value}")

    collection = _optional_id(fields.get("collection"))
    token = _optional_id(fields.get("token"))
    if collection is None or token is None:
        raise _LineError("collection and token required")

    raw_price = str(fields.get("price_eth") or "").strip()
    price: Optional[float] = None
    if kind is TxKind.SALE:
        if not raw_price:
            raise _LineError("price required for sale")
        try:
            price = float(raw_price)
        except ValueError as e:
            raise _LineError(f"invalid price '{raw_price}'") from e
        if not np.isfinite(price) or price < 0:
            raise _LineError("price must be a nonnegative number")
    elif raw_price:
        raise _LineError(f"price not allowed for {kind.value}")

    return TransactionRecord(tx_id, timestamp, kind, from_wallet, to_wallet, collection, token, price)


def _split_fields(line: str, columns: tuple[str, ...], schema: ColumnSchema) -> dict[str, Optional[str]]:
    if schema.record_format is RecordFormat.JSON_LINES:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise _LineError(f"invalid json: {e.msg}") from e
        if not isinstance(obj, dict):
            raise _LineError("json line is not an object")
        return {key: None if obj.get(key) is None else str(obj[key]) for key in TRANSACTION_COLUMNS}

    values = line.split(schema.delimiter)
    if len(values) != len(columns):
        raise _LineError(f"expected {len(columns)} fields, got {len(values)}")
    return dict(zip(columns, values))


def parse_transactions(
    lines: Iterable[str],
    schema: ColumnSchema = ColumnSchema(),
) -> tuple[list[TransactionRecord], list[ParseIssue]]:
    """
    Parse transaction lines into records.

    Every nonempty data line yields exactly one record or one issue. Records are
    returned sorted by (timestamp, tx_id), so the result does not depend on the
    order of the input lines.

    Parameters:
    - lines (Iterable[str]): Raw lines, e.g. an open text file.
    - schema (ColumnSchema): Column layout.

    Returns:
    - tuple[list[TransactionRecord], list[ParseIssue]]: Parsed records and per-line issues.
    """
    records: list[TransactionRecord] = []
    issues: list[ParseIssue] = []
    columns = schema.columns
    header_pending = schema.has_header and schema.record_format is RecordFormat.DELIMITED

    for line_number, raw_line in enumerate(lines, start=1):
        line = raw_line.rstrip("\r\n")
        if not line.strip():
            continue
        if header_pending:
            columns = tuple(name.strip().lower() for name in line.split(schema.delimiter))
            header_pending = False
            missing = set(TRANSACTION_COLUMNS) - set(columns)
            if missing:
                raise DataValidationError(f"header lacks columns: {sorted(missing)}")
            continue
        try:
            records.append(build_record(_split_fields(line, columns, schema)))
        except _LineError as e:
            issues.append(ParseIssue(line_number, str(e), line))

    records.sort(key=TransactionRecord.sort_key)
    return records, issues


class RecordLoader(ABC):
    """
    Abstract base class for loading transaction files.

    Subclasses decide on the line layout; the validation rules are shared.
    """

    @abstractmethod
    def __init__(self, file: str) -> None:
        """
        Args:
            file (str): The path to the transaction file.
        """

    @abstractmethod
    def get_data(self) -> tuple[list[TransactionRecord], list[ParseIssue]]:
        """Return parsed records and parse issues."""


class _FileRecordLoader(RecordLoader):
    schema: ColumnSchema

    def __init__(self, file: str) -> None:
        if not os.path.isfile(file):
            raise FileNotFoundError(f"No such file: {file}")
        self.file: str = file

    def get_data(self) -> tuple[list[TransactionRecord], list[ParseIssue]]:
        with open(self.file, "r", encoding="utf-8") as f:
            return parse_transactions(f, self.schema)


class DelimitedRecordLoader(_FileRecordLoader):
    """Comma separated `transactions.csv` with a header line."""
    schema = ColumnSchema.csv_with_header()


class JsonLinesRecordLoader(_FileRecordLoader):
    """One JSON object per line, keyed by the transaction column names."""
    schema = ColumnSchema.jsonl()


def get_loader_strategy(file: str) -> type[RecordLoader]:
    """Get RecordLoader by file extension."""
    strategies = {
        '.csv': DelimitedRecordLoader,
        '.jsonl': JsonLinesRecordLoader,
    }
    strategy_class = strategies.get(os.path.splitext(file)[1].lower())
    if strategy_class is None:
        raise DataValidationError(f"Unsupported transaction file type: {file}")
    return strategy_class


def load_rates(file: str) -> EthUsdRates:
    """
    Load `rates.csv` (day, eth_usd) and fill missing days by linear interpolation.
    """
    df = pd.read_csv(file)
    if not {"day", "eth_usd"} <= set(df.columns):
        raise DataValidationError(f"{file}: expected columns day, eth_usd")
    if df.empty:
        raise DataValidationError(f"{file}: no rates")
    if (df["eth_usd"] <= 0).any() or df["eth_usd"].isna().any():
        raise DataValidationError(f"{file}: rates must be positive")
    if df["day"].duplicated().any():
        raise DataValidationError(f"{file}: duplicate day")

    df = df.sort_values("day")
    days = df["day"].to_numpy(dtype=np.int64)
    full_days = np.arange(days[0], days[-1] + 1)
    values = np.interp(full_days, days, df["eth_usd"].to_numpy(dtype=np.float64))
    if len(full_days) > len(days):
        logger.info(f"Interpolated {len(full_days) - len(days)} missing ETH-USD days")
    return EthUsdRates(int(days[0]), tuple(float(v) for v in values))


def load_collections(collections_file: str, properties_file: Optional[str] = None) -> dict[str, CollectionMeta]:
    """
    Load `collections.csv` (collection, total_supply) and optional `properties.csv`
    (collection, token, property_key).
    """
    collections_df = pd.read_csv(collections_file, dtype={"collection": str})
    if collections_df["collection"].duplicated().any():
        raise DataValidationError(f"{collections_file}: duplicate collection")
    if (collections_df["total_supply"] < 0).any():
        raise DataValidationError(f"{collections_file}: total_supply must be nonnegative")

    properties: dict[str, dict[str, set[str]]] = {}
    if properties_file is not None and os.path.isfile(properties_file):
        properties_df = pd.read_csv(properties_file, dtype=str).dropna()
        for collection, token, key in properties_df[["collection", "token", "property_key"]].itertuples(index=False):
            properties.setdefault(normalize_id(collection), {}).setdefault(normalize_id(token), set()).add(key.strip())

    metas: dict[str, CollectionMeta] = {}
    for collection, supply in collections_df[["collection", "total_supply"]].itertuples(index=False):
        collection = normalize_id(collection)
        token_properties = {token: frozenset(keys) for token, keys in properties.get(collection, {}).items()}
        metas[collection] = CollectionMeta(collection, int(supply), token_properties)

    unknown = set(properties) - set(metas)
    if unknown:
        raise DataValidationError(f"properties reference unknown collections: {sorted(unknown)[:5]}")
    return metas


def attach_transaction_tokens(
    metas: dict[str, CollectionMeta],
    records: Iterable[TransactionRecord],
) -> dict[str, CollectionMeta]:
    """Make every collection know the tokens seen in transactions."""
    seen: dict[str, set[str]] = {}
    for record in records:
        seen.setdefault(record.collection, set()).add(record.token)

    result = dict(metas)
    for collection, tokens in seen.items():
        if collection not in result:
            logger.warning(f"Collection {collection} missing from collections.csv, supply set to {len(tokens)}")
            result[collection] = CollectionMeta(collection, len(tokens), {})
        result[collection] = result[collection].with_tokens(tokens)
    return result
