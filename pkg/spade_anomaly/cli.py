import contextlib
import functools
import json
import logging
from pathlib import Path
from typing import Any

import click

from . import experiment
from .config import METHODS, ExperimentConfig, load_config
from .errors import ConfigError, SpadeError
from .evaluation import aggregate_runs, write_auc_csv, write_report

logger = logging.getLogger(__name__)

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
SCENARIOS = ["new_anomalies", "easiness", "pu", "high_risk", "temporal"]


@contextlib.contextmanager
def _reported_errors():
    try:
        yield
    except SpadeError as exc:
        raise click.ClickException(str(exc)) from exc


def _parse_assignment(raw: str) -> tuple[str, Any]:
    key, sep, value = raw.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects KEY=VALUE, got '{raw}'")
    try:
        return key.strip(), json.loads(value)
    except json.JSONDecodeError:
        return key.strip(), value


def _overrides(options: dict[str, Any]) -> dict[str, Any]:
    """Map command-line flags onto dotted config keys."""
    overrides: dict[str, Any] = {}
    for raw in options.get("assignments") or ():
        key, value = _parse_assignment(raw)
        overrides[key] = value
    flag_keys = {
        "method": "method",
        "scenario": "scenario.kind",
        "alpha": "train.alpha",
        "beta": "train.beta",
        "k": "train.k",
        "out": "output_dir",
    }
    for flag, key in flag_keys.items():
        if options.get(flag) is not None:
            overrides[key] = options[flag]
    if options.get("seed"):
        overrides["seeds"] = list(options["seed"])
    if options.get("no_partial_matching"):
        overrides["train.partial_matching"] = False
    if options.get("no_ensemble"):
        overrides["train.k"] = 1
    if options.get("no_normals_in_occ"):
        overrides["train.normals_in_occ"] = False
    if options.get("majority_vote"):
        overrides["train.vote"] = "majority"
    return overrides


def _resolve(options: dict[str, Any]) -> ExperimentConfig:
    overrides = _overrides(options)
    if "output_dir" in overrides:
        overrides["output_dir"] = str(overrides["output_dir"])
    return load_config(options.get("config"), overrides)


def experiment_options(func):
    """Config file plus the flags that override it."""
    options = [
        click.option("--config", type=click.Path(path_type=Path), help="JSON config"),
        click.option("--seed", type=int, multiple=True, help="Seed (repeatable)"),
        click.option("--method", type=click.Choice(list(METHODS)), help="Method"),
        click.option("--scenario", type=click.Choice(SCENARIOS), help="Scenario"),
        click.option("--alpha", type=float, help="Pseudo-label loss weight"),
        click.option("--beta", type=float, help="Reconstruction loss weight"),
        click.option("--k", type=int, help="Number of OCCs in the pseudo-labeler"),
        click.option("--out", type=click.Path(path_type=Path), help="Output directory"),
        click.option(
            "--no-partial-matching",
            is_flag=True,
            help="Fixed percentile thresholds instead of partial matching",
        ),
        click.option("--no-ensemble", is_flag=True, help="Single OCC (K=1)"),
        click.option(
            "--no-normals-in-occ",
            is_flag=True,
            help="Fit the OCCs without the labeled normals",
        ),
        click.option(
            "--majority-vote", is_flag=True, help="Majority instead of unanimous"
        ),
        click.option(
            "--set",
            "assignments",
            multiple=True,
            metavar="KEY=VALUE",
            help="Any config key, e.g. train.max_epochs=50",
        ),
    ]
    for option in reversed(options):
        func = option(func)

    @functools.wraps(func)
    def wrapper(**kwargs):
        with _reported_errors():
            return func(**kwargs)

    return wrapper


@click.group()
@click.option(
    "--log-level",
    default="INFO",
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    help="Logging level",
)
def main(log_level: str) -> None:
    """Semi-supervised anomaly detection under labeled/unlabeled mismatch."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


@main.command()
@experiment_options
def prepare(**options) -> None:
    """Write the scenario CSVs and manifest for each seed."""
    cfg = _resolve(options)
    for seed in cfg.seeds:
        directory = experiment.prepare(cfg, seed, cfg.output_dir)
        click.echo(str(directory))


@main.command()
@click.argument("scenario_dir", nargs=-1, type=click.Path(path_type=Path))
@experiment_options
def train(scenario_dir: tuple[Path, ...], **options) -> None:
    """Train the configured method on prepared scenario directories."""
    cfg = _resolve(options)
    directories = scenario_dir or tuple(
        experiment.seed_dir(cfg.output_dir, s) for s in cfg.seeds
    )
    for directory in directories:
        if not experiment.is_scenario_dir(directory):
            raise ConfigError(f"Not a prepared scenario directory: {directory}")
        click.echo(str(experiment.train(cfg, directory)))


@main.command()
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(path_type=Path))
@click.option(
    "--checkpoint",
    type=click.Path(path_type=Path),
    help="Checkpoint to use instead of <run_dir>/model.json",
)
@click.option(
    "--out",
    type=click.Path(path_type=Path),
    help="Where to write the aggregate over several run directories",
)
def evaluate(run_dirs: tuple[Path, ...], checkpoint: Path | None, out: Path | None):
    """Evaluate checkpoints on the test split of their scenario directories."""
    with _reported_errors():
        if checkpoint is not None and len(run_dirs) > 1:
            raise ConfigError("--checkpoint needs exactly one run directory")
        reports = []
        for run_dir in run_dirs:
            ckpt = checkpoint or run_dir / experiment.MODEL_JSON
            reports.append(experiment.evaluate(ckpt, run_dir))
        result = reports[0]
        if len(reports) > 1:
            result = aggregate_runs(reports)
            if out is not None:
                out.mkdir(parents=True, exist_ok=True)
                experiment.validate_artifacts(
                    [
                        write_report(result, out / experiment.REPORT_JSON),
                        write_auc_csv(reports, out / experiment.AUC_CSV),
                    ]
                )
        click.echo(result.model_dump_json(indent=2, exclude={"precision_curves"}))


@main.command()
@experiment_options
def run(**options) -> None:
    """prepare, train and evaluate every seed, then aggregate."""
    cfg = _resolve(options)
    report = experiment.run_experiment(cfg)
    click.echo(report.model_dump_json(indent=2, exclude={"precision_curves"}))


@main.command()
@click.option(
    "--param",
    "parameter",
    required=True,
    type=click.Choice(sorted(experiment.SWEEP_PARAMETERS)),
    help="Parameter to sweep",
)
@click.option(
    "--values",
    required=True,
    help="Comma-separated values, e.g. 0,0.1,0.5,1,2 or full,no-ensemble",
)
@experiment_options
def sweep(parameter: str, values: str, **options) -> None:
    """Run every seed for each value and write sweep.csv."""
    cfg = _resolve(options)
    parsed = experiment.parse_sweep_values(parameter, values)
    frame = experiment.sweep(cfg, parameter, parsed)
    click.echo(frame.to_csv(index=False, lineterminator="\n"), nl=False)


@main.command()
@click.option("--port", default=8000, help="Port to listen on for SSE")
@click.option(
    "--transport",
    type=click.Choice(["stdio", "sse"]),
    default="stdio",
    help="Transport type",
)
def serve(port: int, transport: str) -> None:
    """Expose prepare/train/evaluate as tools over stdio or SSE."""
    from .server import serve as run_server

    run_server(port, transport)
