"""
The run matrix: steps x variants x seeds, cells in parallel worker processes.

Each worker builds the shared `Workspace` once through a picklable loader.
A failing cell becomes a report row with status "failed" and its error text.
"""
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger
from tqdm import tqdm

from src.config.config_definitions import RunConfig, RunSettings
from src.evaluation.experiment import Cell, MetricReport, Workspace, report_frame, run_cell

METRICS: tuple[str, ...] = ("acc", "mcc", "mae", "mse")
SUMMARY_KEYS: list[str] = ["task", "step", "variant"]

_worker_workspace: Optional[Workspace] = None
_worker_config: Optional[RunConfig] = None


def matrix_cells(settings: RunSettings) -> list[Cell]:
    return [
        Cell(settings.task, step, variant, seed)
        for step in settings.steps
        for variant in settings.variants
        for seed in settings.seeds
    ]


def run_cell_safely(workspace: Workspace, config: RunConfig, cell: Cell) -> MetricReport:
    try:
        return run_cell(workspace, config, cell)
    except Exception as e:  # pylint: disable=broad-except
        logger.exception(f"Cell {cell.cell_id} failed")
        return MetricReport(cell, status="failed", error=f"{type(e).__name__}: {e}")


def _init_worker(loader: Callable[[], Workspace], config: RunConfig) -> None:
    global _worker_workspace, _worker_config  # pylint: disable=global-statement
    _worker_workspace = loader()
    _worker_config = config


def _run_in_worker(cell: Cell) -> MetricReport:
    return run_cell_safely(_worker_workspace, _worker_config, cell)


def run_matrix(
    loader: Callable[[], Workspace],
    config: RunConfig,
    cells: Sequence[Cell],
    workers: int = 1,
) -> pd.DataFrame:
    """
    Run every cell and return one report row per cell, in `cells` order.

    Parameters:
        loader (Callable[[], Workspace]): Builds the shared inputs; must be picklable for workers > 1.
        config (RunConfig): Resolved configuration.
        cells (Sequence[Cell]): Cells to run.
        workers (int): Worker processes; 1 runs in this process.
    """
    if workers <= 1:
        workspace = loader()
        reports = [run_cell_safely(workspace, config, cell) for cell in tqdm(cells, desc="matrix")]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(loader, config)) as pool:
            reports = list(tqdm(pool.map(_run_in_worker, cells), total=len(cells), desc="matrix"))

    failed = [r.cell.cell_id for r in reports if r.status != "ok"]
    if failed:
        logger.error(f"{len(failed)} of {len(reports)} cells failed: {', '.join(failed)}")
    return report_frame(reports)


def summarize(report: pd.DataFrame) -> pd.DataFrame:
    """
    Mean and standard deviation over seeds of every metric, per (task, step, variant).

    Failed cells are excluded from the statistics and counted in `n_failed`.
    """
    rows = []
    for (task, step, variant), group in report.groupby(SUMMARY_KEYS, sort=False):
        ok = group[group["status"] == "ok"]
        row = {"task": task, "step": step, "variant": variant, "n_seeds": len(ok), "n_failed": len(group) - len(ok)}
        for metric in METRICS:
            values = ok[metric].to_numpy(dtype=np.float64)
            values = values[~np.isnan(values)]
            row[f"{metric}_mean"] = float(values.mean()) if values.size else np.nan
            row[f"{metric}_std"] = float(values.std()) if values.size else np.nan
        rows.append(row)
    return pd.DataFrame(rows)
