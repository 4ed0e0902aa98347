import os

from loguru import logger

from src.config.config_definitions import PreprocessConfig
from src.errors import DataValidationError, MissingArtifactError
from src.ingest.embeddings import resolve_embeddings
from src.ingest.loader import attach_transaction_tokens, get_loader_strategy, load_collections, load_rates
from src.ingest.records import MarketData

TRANSACTION_FILES: tuple[str, ...] = ("transactions.csv", "transactions.jsonl")


def find_transaction_file(data_dir: str) -> str:
    for name in TRANSACTION_FILES:
        file = os.path.join(data_dir, name)
        if os.path.isfile(file):
            return file
    raise MissingArtifactError(f"no transactions file ({' or '.join(TRANSACTION_FILES)}) in {data_dir}")


def load_market(data_dir: str, preprocess: PreprocessConfig = PreprocessConfig()) -> MarketData:
    """
    Read every ingest-format file of `data_dir` into a `MarketData` bundle.

    Parameters:
    - data_dir (str): Directory with transactions, rates.csv, collections.csv,
      properties.csv and optional embedding files.
    - preprocess (PreprocessConfig): Embedding file names and dimension.
    """
    transactions_file = find_transaction_file(data_dir)
    for name in ("rates.csv", "collections.csv"):
        if not os.path.isfile(os.path.join(data_dir, name)):
            raise MissingArtifactError(f"{name} not found in {data_dir}")

    loader = get_loader_strategy(transactions_file)(transactions_file)
    records, issues = loader.get_data()
    logger.info(f"Parsed {len(records)} records from {transactions_file}, {len(issues)} issues")
    if not records:
        raise DataValidationError(f"{transactions_file}: no valid transactions")

    rates = load_rates(os.path.join(data_dir, "rates.csv"))
    metas = load_collections(
        os.path.join(data_dir, "collections.csv"),
        os.path.join(data_dir, "properties.csv"),
    )
    metas = attach_transaction_tokens(metas, records)

    dim = preprocess.embedding_dim
    visual = resolve_embeddings(os.path.join(data_dir, preprocess.visual_embeddings), metas, dim)
    textual = resolve_embeddings(os.path.join(data_dir, preprocess.textual_embeddings), metas, dim)

    return MarketData(tuple(records), tuple(issues), metas, rates, visual, textual)
