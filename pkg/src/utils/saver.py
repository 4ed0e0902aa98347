import io
import os
import zipfile
from abc import ABC, abstractmethod
from typing import Any

import numpy as np
import numpy.typing as npt
import pandas as pd

# Fixed member timestamp so identical content gives identical bytes.
ZIP_DATE_TIME: tuple[int, int, int, int, int, int] = (1980, 1, 1, 0, 0, 0)


class SaverStrategy(ABC):
    """Save one artifact to a file."""
    @abstractmethod
    def save(self, file: str, data: Any) -> str:
        pass

    @property
    @abstractmethod
    def file_type(self) -> str:
        """Return File Type"""


class CsvSaverStrategy(SaverStrategy):

    def save(self, file: str, data: pd.DataFrame) -> str:
        os.makedirs(os.path.dirname(file) or ".", exist_ok=True)
        data.to_csv(file, index=False, lineterminator="\n")
        return file

    @property
    def file_type(self) -> str:
        return "csv"


class NpzSaverStrategy(SaverStrategy):
    """
    `np.savez` compatible archive with a fixed member timestamp and sorted members,
    so the same arrays always produce the same bytes.
    """

    def save(self, file: str, data: dict[str, npt.NDArray]) -> str:
        os.makedirs(os.path.dirname(file) or ".", exist_ok=True)
        with zipfile.ZipFile(file, "w", compression=zipfile.ZIP_STORED) as archive:
            for key in sorted(data):
                buffer = io.BytesIO()
                np.lib.format.write_array(buffer, np.ascontiguousarray(data[key]), allow_pickle=False)
                info = zipfile.ZipInfo(f"{key}.npy", date_time=ZIP_DATE_TIME)
                info.external_attr = 0o644 << 16
                archive.writestr(info, buffer.getvalue())
        return file

    @property
    def file_type(self) -> str:
        return "npz"


def get_saver_strategy(file_type: str) -> SaverStrategy:
    """Get SaverStrategy by file type."""
    strategies = {
        'csv': CsvSaverStrategy,
        'npz': NpzSaverStrategy,
    }

    strategy_class = strategies.get(file_type)
    if strategy_class is None:
        raise ValueError(f"Unsupported file type: {file_type}")
    return strategy_class()


def load_npz(file: str) -> dict[str, npt.NDArray]:
    with np.load(file, allow_pickle=False) as archive:
        return {key: archive[key] for key in archive.files}
