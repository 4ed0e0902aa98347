"""
Command-line front-end of the pipeline.

    python -m src.cli [--config FILE] [--set section.key=value ...] <stage> [options]

Expected failures exit with the code of their `PipelineError` and print one
line `error=<code> <message>`.
"""
import functools
from collections.abc import Callable
from typing import Any, Optional

import click
import yaml
from loguru import logger

from src.cli.stages import PipelineStages
from src.config.config import load_config
from src.config.enums import Task, Variant
from src.errors import ConfigError, PipelineError
from src.evaluation.experiment import Cell

VARIANTS = click.Choice([v.value for v in Variant])
TASKS = click.Choice([t.value for t in Task])


class StageFailed(click.ClickException):
    """A `PipelineError` surfaced as a single machine-parsable line."""

    def __init__(self, error: PipelineError) -> None:
        message = " ".join(str(error).split())
        super().__init__(f"error={error.code} {message}")
        self.exit_code = error.exit_code

    def show(self, file: Optional[Any] = None) -> None:
        click.echo(self.format_message(), err=True, file=file)


def parse_overrides(pairs: tuple[str, ...]) -> dict:
    """
    Turn `section.key=value` pairs into a nested dict, values parsed as YAML scalars.

    Raises:
        ConfigError: When a pair has no `=` or no section.
    """
    overrides: dict = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"override '{pair}' must look like section.key=value")
        *sections, name = key.strip().split(".")
        node = overrides
        for section in sections:
            node = node.setdefault(section, {})
        node[name] = yaml.safe_load(raw)
    return overrides


def stage_command(func: Callable) -> Callable:
    """Build the stages from the group options and map pipeline errors to exit codes."""

    @functools.wraps(func)
    @click.pass_obj
    def wrapper(obj: dict, *args, **kwargs):
        try:
            overrides = parse_overrides(obj["overrides"])
            for section, key, value in obj["paths"]:
                if value is not None:
                    overrides.setdefault(section, {})[key] = value
            config = load_config(obj["config_file"], overrides)
            stages = PipelineStages(config)
            outputs = func(stages, *args, **kwargs)
        except PipelineError as e:
            logger.error(f"{e.code}: {e}")
            raise StageFailed(e) from e
        except Exception:
            logger.exception(f"Unexpected failure in '{func.__name__}'")
            raise
        for name in outputs or ():
            click.echo(name)

    return wrapper


@click.group()
@click.option('--config', 'config_file', type=click.Path(dir_okay=False), default=None, help='YAML config file.')
@click.option('--data-dir', default=None, help='Overrides paths.data_dir.')
@click.option('--output-dir', default=None, help='Overrides paths.output_dir.')
@click.option('--set', 'overrides', multiple=True, help='Config override, e.g. model.lr=0.01.')
@click.pass_context
def cli(ctx: click.Context, config_file: Optional[str], data_dir: Optional[str], output_dir: Optional[str], overrides: tuple[str, ...]) -> None:
    """NFT market price-trend pipeline"""
    ctx.obj = {
        "config_file": config_file,
        "overrides": overrides,
        "paths": [("paths", "data_dir", data_dir), ("paths", "output_dir", output_dir)],
    }


@cli.command()
@click.option('--out', 'out_dir', default=None, help='Target directory, paths.data_dir by default.')
@click.option('--seed', type=int, default=None, help='Overrides synthetic.seed.')
@stage_command
def synth(stages: PipelineStages, out_dir: Optional[str], seed: Optional[int]) -> list[str]:
    """Generate a synthetic market with planted phenomena"""
    return stages.synth(out_dir, seed)


@cli.command()
@stage_command
def ingest(stages: PipelineStages) -> list[str]:
    """Parse and validate the raw market files"""
    return stages.ingest()


@cli.command()
@stage_command
def preprocess(stages: PipelineStages) -> list[str]:
    """Flag wash and outlier sales, aggregate daily series, replay ownership"""
    return stages.preprocess()


@cli.command('build-graph')
@click.option('--export-days', type=int, multiple=True, help='Also write snapshot_<day>.csv for these days.')
@stage_command
def build_graph(stages: PipelineStages, export_days: tuple[int, ...]) -> list[str]:
    """Build daily snapshot graphs and fit the feature schema"""
    return stages.build_graph(export_days)


@cli.command()
@click.option('--seed', type=int, default=None, help='Louvain visiting-order seed.')
@stage_command
def communities(stages: PipelineStages, seed: Optional[int]) -> list[str]:
    """Detect wallet communities on the training-window transfer graph"""
    return stages.communities(seed)


@cli.command()
@click.option('--task', type=TASKS, default=None, help='Prediction task, run.task by default.')
@click.option('--ablate', 'variant', type=VARIANTS, default=None, help='Variant or baseline, run.variant by default.')
@click.option('--seed', type=int, default=None, help='Training seed, the first of run.seeds by default.')
@click.option('--step', type=int, default=None, help='Prediction step N, model.step by default.')
@stage_command
def train(stages: PipelineStages, task: Optional[str], variant: Optional[str], seed: Optional[int], step: Optional[int]) -> list[str]:
    """Train one model variant"""
    run = stages.config.run
    if step is not None and step <= 0:
        raise ConfigError(f"step must be positive, got {step}")
    cell = Cell(
        Task(task) if task is not None else run.task,
        step if step is not None else stages.config.model.step,
        Variant(variant) if variant is not None else run.variant,
        seed if seed is not None else run.seeds[0],
    )
    return stages.train(cell)


@cli.command()
@click.option('--compare', type=VARIANTS, multiple=True, help='Baselines scored next to the trained model.')
@stage_command
def evaluate(stages: PipelineStages, compare: tuple[str, ...]) -> list[str]:
    """Score the trained model on the test split"""
    return stages.evaluate([Variant(v) for v in compare])


@cli.command()
@stage_command
def importance(stages: PipelineStages) -> list[str]:
    """Permutation importance of feature groups for the trained model"""
    return stages.importance()


@cli.command()
@click.option('--workers', type=int, default=None, help='Worker processes, run.workers by default.')
@stage_command
def matrix(stages: PipelineStages, workers: Optional[int]) -> list[str]:
    """Run every step x variant x seed cell"""
    if workers is not None:
        if workers <= 0:
            raise ConfigError(f"workers must be positive, got {workers}")
        run = stages.config.run.model_copy(update={"workers": workers})
        stages.config = stages.config.model_copy(update={"run": run})
    return stages.matrix()


@cli.command()
@stage_command
def report(stages: PipelineStages) -> list[str]:
    """Render results into report.md, CSVs and figures"""
    return stages.report()


if __name__ == '__main__':
    cli()  # pylint: disable=no-value-for-parameter
