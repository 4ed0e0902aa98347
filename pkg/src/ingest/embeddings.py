"""
Content embeddings of collections.

Pretrained visual/textual encoders run upstream; this module only reads their
output. When no file is available a deterministic hash-seeded unit vector
stands in, which keeps tests and synthetic runs reproducible.
"""
import hashlib
import os
from collections.abc import Iterable

import numpy as np
import numpy.typing as npt
from loguru import logger

from src.config.enums import EmbeddingSource
from src.errors import DataValidationError
from src.ingest.loader import normalize_id
from src.ingest.records import EmbeddingTable


def stable_seed(key: str) -> int:
    """64-bit seed derived from SHA-256, identical on every platform."""
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")


def fallback_embedding(key: str, dim: int) -> npt.NDArray[np.float64]:
    """Unit-norm vector that is a pure function of (key, dim)."""
    if dim < 1:
        raise ValueError(f"dim must be at least 1, got {dim}")
    rng = np.random.default_rng(stable_seed(f"{key}/{dim}"))
    vector = rng.standard_normal(dim)
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        vector = np.zeros(dim)
        vector[0] = 1.0
        return vector
    return vector / norm


def fallback_table(keys: Iterable[str], dim: int) -> EmbeddingTable:
    return EmbeddingTable(
        dim, {key: fallback_embedding(key, dim) for key in keys}, EmbeddingSource.HASH_FALLBACK
    )


def load_embeddings(file: str, expected_dim: int) -> EmbeddingTable:
    """
    Load an embedding file: first line `dim=<D>`, then rows `id,v1,...,vD`.

    Raises:
        DataValidationError: On a dim mismatch, a row of the wrong length or a duplicate id.
    """
    with open(file, "r", encoding="utf-8") as f:
        lines = [line.strip() for line in f]

    if not lines or not lines[0].startswith("dim="):
        raise DataValidationError(f"{file}: first line must be 'dim=<D>'")
    try:
        dim = int(lines[0].split("=", 1)[1])
    except ValueError as e:
        raise DataValidationError(f"{file}: invalid dim header '{lines[0]}'") from e
    if dim != expected_dim:
        raise DataValidationError(f"{file}: dim {dim} does not match expected {expected_dim}")

    vectors: dict[str, npt.NDArray[np.float64]] = {}
    for line_number, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        key, *values = line.split(",")
        key = normalize_id(key)
        if len(values) != dim:
            raise DataValidationError(f"{file}: row {line_number} ('{key}') has {len(values)} values, expected {dim}")
        if key in vectors:
            raise DataValidationError(f"{file}: duplicate id '{key}' at row {line_number}")
        try:
            vectors[key] = np.asarray([float(v) for v in values], dtype=np.float64)
        except ValueError as e:
            raise DataValidationError(f"{file}: row {line_number} ('{key}') is not numeric") from e

    return EmbeddingTable(dim, vectors, EmbeddingSource.FILE)


def resolve_embeddings(file: str, keys: Iterable[str], dim: int) -> EmbeddingTable:
    """
    Load `file` when it exists and fill ids it lacks with fallback vectors.
    Without a file every id gets a fallback vector.
    """
    keys = sorted(set(keys))
    if not os.path.isfile(file):
        logger.info(f"No embedding file {file}, using hash fallback for {len(keys)} ids")
        return fallback_table(keys, dim)

    table = load_embeddings(file, dim)
    missing = [key for key in keys if key not in table]
    if not missing:
        return table
    logger.warning(f"{file}: {len(missing)} ids without embedding, using hash fallback for them")
    vectors = dict(table.vectors)
    vectors.update({key: fallback_embedding(key, dim) for key in missing})
    return EmbeddingTable(dim, vectors, EmbeddingSource.FILE)


def write_embeddings(file: str, table: EmbeddingTable) -> None:
    with open(file, "w", encoding="utf-8") as f:
        f.write(f"dim={table.dim}\n")
        for key in sorted(table.vectors):
            f.write(key + "," + ",".join(repr(float(v)) for v in table.vector(key)) + "\n")
