"""
Versioned parameter checkpoints.

Layout of the NPZ archive: `param/<name>`, `adam_m/<name>`, `adam_v/<name>`,
`meta/format_version` and `meta/step`. Arrays are stored as little-endian
float64 with a fixed member timestamp, so identical parameters give identical bytes.
"""
import hashlib
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.autodiff.optim import Adam
from src.autodiff.tensor import Tensor
from src.errors import DataValidationError
from src.utils.saver import get_saver_strategy, load_npz

FORMAT_VERSION: int = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def _le(array: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(array, dtype="<f8")


def save_checkpoint(file: str, params: Mapping[str, Tensor], optimizer: Optional[Adam] = None) -> str:
    data: dict[str, np.ndarray] = {
        "meta/format_version": np.asarray(FORMAT_VERSION, dtype="<i8"),
        "meta/step": np.asarray(optimizer.t if optimizer else 0, dtype="<i8"),
    }
    for name, p in params.items():
        data[f"param/{name}"] = _le(p.data)
        if optimizer is not None and name in optimizer.m:
            data[f"adam_m/{name}"] = _le(optimizer.m[name])
            data[f"adam_v/{name}"] = _le(optimizer.v[name])
    return get_saver_strategy("npz").save(file, data)


def load_checkpoint(file: str) -> Checkpoint:
    data = load_npz(file)
    version = int(data.get("meta/format_version", -1))
    if version != FORMAT_VERSION:
        raise DataValidationError(f"{file}: unsupported checkpoint format {version}")

    def group(prefix: str) -> dict[str, np.ndarray]:
        return {key[len(prefix):]: value.astype(np.float64) for key, value in data.items() if key.startswith(prefix)}

    return Checkpoint(group("param/"), group("adam_m/"), group("adam_v/"), int(data["meta/step"]))


def restore_parameters(params: Mapping[str, Tensor], values: Mapping[str, np.ndarray], names: Optional[Iterable[str]] = None) -> None:
    """Copy stored values into `params` in place; shapes must match."""
    for name in names if names is not None else params:
        if name not in values:
            raise DataValidationError(f"checkpoint has no parameter '{name}'")
        if values[name].shape != params[name].shape:
            raise DataValidationError(
                f"parameter '{name}' has shape {values[name].shape} in checkpoint, expected {params[name].shape}"
            )
        params[name].data[...] = values[name]


def parameters_digest(params: Mapping[str, Tensor | np.ndarray]) -> str:
    """SHA-256 over sorted names, shapes and raw little-endian float64 values."""
    digest = hashlib.sha256()
    for name in sorted(params):
        value = params[name]
        array = _le(value.data if isinstance(value, Tensor) else value)
        digest.update(name.encode("utf-8"))
        digest.update(repr(array.shape).encode("ascii"))
        digest.update(array.tobytes())
    return digest.hexdigest()
