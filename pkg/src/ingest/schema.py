from dataclasses import dataclass
from enum import Enum


TRANSACTION_COLUMNS: tuple[str, ...] = (
    "tx_id", "timestamp", "kind", "from_wallet", "to_wallet", "collection", "token", "price_eth"
)


class RecordFormat(Enum):
    DELIMITED = 'delimited'
    JSON_LINES = 'jsonl'


@dataclass(frozen=True)
class ColumnSchema:
    """
    Describes how transaction lines are laid out.

    Attributes:
        columns (tuple[str, ...]): Column names in file order. Must contain every name of
            `TRANSACTION_COLUMNS`; extra columns are ignored.
        delimiter (str): Field separator for delimited text.
        has_header (bool): Whether the first nonempty line is a header.
        record_format (RecordFormat): Delimited text or one JSON object per line.
    """
    columns: tuple[str, ...] = TRANSACTION_COLUMNS
    delimiter: str = ","
    has_header: bool = False
    record_format: RecordFormat = RecordFormat.DELIMITED

    def __post_init__(self) -> None:
        missing = set(TRANSACTION_COLUMNS) - set(self.columns)
        if missing:
            raise ValueError(f"schema lacks columns: {sorted(missing)}")

    @classmethod
    def jsonl(cls) -> "ColumnSchema":
        return cls(record_format=RecordFormat.JSON_LINES)

    @classmethod
    def csv_with_header(cls) -> "ColumnSchema":
        return cls(has_header=True)
