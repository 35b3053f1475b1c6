"""
Reproducible experiment pipeline: prepare a scenario, train a method on it and
evaluate the checkpoint, for one seed or fanned out over seeds and sweeps.

Output layout under the experiment directory:

    seed-<s>/labeled.csv, unlabeled.csv, test.csv, manifest.json
    seed-<s>/model.json, trace.csv, pseudo_labels.json, matching_curves.csv
    seed-<s>/report.json, auc.csv, precision_curves.csv
    report.json, auc.csv                  (aggregate over seeds)
    <parameter>-<value>/...  sweep.csv    (sweeps)
"""

import json
import logging
from functools import partial
from pathlib import Path
from typing import Any, Callable, TypeVar

import anyio
import anyio.to_thread
import pandas as pd

from .config import ExperimentConfig, RuntimeSettings, build_config
from .dataset import (
    CsvSchema,
    Dataset,
    load_csv,
    make_mismatch_benchmark,
    split_train_test,
    to_anomaly_labels,
)
from .errors import ArtifactError, ConfigError, EvaluationError, SpadeError
from .evaluation import (
    METRICS,
    EvalReport,
    aggregate_runs,
    evaluate_splits,
    precision_curve,
    write_auc_csv,
    write_precision_csv,
    write_report,
)
from .scenarios import (
    MANIFEST_JSON,
    ScenarioSplit,
    read_scenario,
    scenario_easiness,
    scenario_high_risk,
    scenario_new_anomalies,
    scenario_pu,
    temporal_split,
    write_scenario,
)
from .thresholding import write_curves_csv
from .trainer import (
    SpadeModel,
    load_checkpoint,
    predict_scores,
    save_checkpoint,
    train_method,
    write_trace_csv,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")

MODEL_JSON = "model.json"
TRACE_CSV = "trace.csv"
PSEUDO_LABELS_JSON = "pseudo_labels.json"
CURVES_CSV = "matching_curves.csv"
REPORT_JSON = "report.json"
AUC_CSV = "auc.csv"
PRECISION_CSV = "precision_curves.csv"
SWEEP_CSV = "sweep.csv"

VARIANTS: dict[str, dict[str, Any]] = {
    "full": {},
    "no-partial-matching": {"train.partial_matching": False},
    "no-ensemble": {"train.k": 1},
    "no-self-supervision": {"train.beta": 0.0},
    "no-normals-in-occ": {"train.normals_in_occ": False},
    "majority-vote": {"train.vote": "majority"},
}

SWEEP_PARAMETERS: dict[str, tuple[str | None, Callable[[str], Any]]] = {
    "alpha": ("train.alpha", float),
    "beta": ("train.beta", float),
    "k": ("train.k", int),
    "label_frac": ("scenario.label_frac", float),
    "variant": (None, str),
}


def seed_dir(out_dir: str | Path, seed: int) -> Path:
    return Path(out_dir) / f"seed-{seed}"


def validate_artifacts(paths: list[Path]) -> list[Path]:
    for path in paths:
        if not path.is_file() or path.stat().st_size == 0:
            raise ArtifactError(f"Artifact missing or empty: {path}")
    return paths


def with_overrides(
    cfg: ExperimentConfig, overrides: dict[str, Any]
) -> ExperimentConfig:
    return build_config(cfg.model_dump(mode="json"), overrides)


def load_datasets(
    cfg: ExperimentConfig, seed: int
) -> tuple[Dataset, Dataset | None]:
    """Labeled source data and, when the config names one, a predefined test set."""
    ds_cfg = cfg.dataset
    if ds_cfg.source == "synthetic":
        data = make_mismatch_benchmark(
            seed=seed,
            n_normal=ds_cfg.n_normal,
            n_per_type=ds_cfg.n_per_type,
            noise_dims=ds_cfg.noise_dims,
            n_views=ds_cfg.n_views,
            view_noise=ds_cfg.view_noise,
        )
        return data, None
    schema = CsvSchema(
        class_column=ds_cfg.class_column,
        feature_columns=(
            None if ds_cfg.feature_columns is None else tuple(ds_cfg.feature_columns)
        ),
        timestamp_column=ds_cfg.timestamp_column,
    )
    data = to_anomaly_labels(load_csv(ds_cfg.path, schema), ds_cfg.normal_classes)
    if ds_cfg.test_path is None:
        return data, None
    test = to_anomaly_labels(
        load_csv(ds_cfg.test_path, schema), ds_cfg.normal_classes
    )
    return data, test


def make_scenario(cfg: ExperimentConfig, seed: int) -> ScenarioSplit:
    data, test = load_datasets(cfg, seed)
    sc = cfg.scenario
    if sc.kind == "temporal":
        if test is not None:
            logger.warning("temporal scenario ignores dataset.test_path")
        return temporal_split(data, cfg.dataset.test_frac, sc.resolved_label_frac())

    if test is None:
        train, test = split_train_test(data, cfg.dataset.test_frac, seed)
    else:
        train = data
    if sc.kind == "new_anomalies":
        return scenario_new_anomalies(
            train, sc.given_types, sc.resolved_label_frac(), seed, test=test
        )
    if sc.kind == "pu":
        return scenario_pu(
            train, sc.given_types, sc.resolved_label_frac(), seed, test=test
        )
    if sc.kind == "easiness":
        return scenario_easiness(train, sc.top_frac, seed, test=test)
    if sc.kind == "high_risk":
        return scenario_high_risk(
            train, sc.risk_frac, sc.label_frac_of_risky, seed, test=test
        )
    raise ConfigError(f"Unknown scenario kind '{sc.kind}'")


def prepare(cfg: ExperimentConfig, seed: int, out_dir: str | Path) -> Path:
    """Write the scenario for one seed; returns its directory."""
    directory = seed_dir(out_dir, seed)
    split = make_scenario(cfg, seed)
    written = write_scenario(split, directory, cfg.model_dump(mode="json"))
    validate_artifacts(written)
    return directory


def train(cfg: ExperimentConfig, scenario_dir: str | Path) -> Path:
    """Train `cfg.method` on a prepared scenario; returns the checkpoint path."""
    scenario_dir = Path(scenario_dir)
    split = read_scenario(scenario_dir)
    train_cfg = cfg.train.model_copy(update={"seed": cfg.train.seed + split.seed})
    model = train_method(split, cfg.method, train_cfg)
    model.config["experiment"] = cfg.model_dump(mode="json")

    written = [save_checkpoint(model, scenario_dir / MODEL_JSON)]
    if isinstance(model, SpadeModel):
        written.append(write_trace_csv(model, scenario_dir / TRACE_CSV))
        if model.pseudo_label_log:
            path = scenario_dir / PSEUDO_LABELS_JSON
            path.write_text(json.dumps(model.pseudo_label_log, indent=2) + "\n")
            written.append(path)
        pl = model.pseudo_labeler
        if pl is not None and pl.curves:
            written.append(write_curves_csv(list(pl.curves), scenario_dir / CURVES_CSV))
    validate_artifacts(written)
    logger.info(f"Trained {cfg.method} on {scenario_dir}")
    return written[0]


def evaluate(checkpoint: str | Path, scenario_dir: str | Path) -> EvalReport:
    """Score the test split and write report.json, auc.csv and precision curves."""
    scenario_dir = Path(scenario_dir)
    model = load_checkpoint(checkpoint)
    split = read_scenario(scenario_dir)
    if split.test is None:
        raise EvaluationError(f"Scenario {scenario_dir} has no test split")
    scores = predict_scores(model, split.test.features)
    report = evaluate_splits(
        scores, split.test, split.given_types, method=model.method, seed=split.seed
    )

    written = []
    spade = model if isinstance(model, SpadeModel) else None
    truth = split.unlabeled_truth
    if spade is not None and spade.pseudo_labeler is not None and truth is not None:
        occ_scores = spade.unlabeled_scores
        if occ_scores is not None and occ_scores.shape[0] == truth.labels.size:
            curves = precision_curve(spade.pseudo_labeler, truth.labels, occ_scores)
            report = report.model_copy(update={"precision_curves": curves})
            written.append(write_precision_csv(curves, scenario_dir / PRECISION_CSV))
        else:
            logger.warning(
                f"{checkpoint} holds no OCC scores for the {truth.labels.size} "
                f"unlabeled samples of {scenario_dir}; skipping precision curves"
            )
    written.append(write_report(report, scenario_dir / REPORT_JSON))
    written.append(write_auc_csv([report], scenario_dir / AUC_CSV))
    validate_artifacts(written)
    return report


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: str | Path) -> EvalReport:
    directory = prepare(cfg, seed, out_dir)
    checkpoint = train(cfg, directory)
    return evaluate(checkpoint, directory)


async def _gather(jobs: list[Callable[[], T]], threads: int) -> list[T]:
    limiter = anyio.CapacityLimiter(threads)
    results: list[Any] = [None] * len(jobs)
    errors: list[SpadeError | None] = [None] * len(jobs)

    async def worker(index: int, job: Callable[[], T]) -> None:
        try:
            results[index] = await anyio.to_thread.run_sync(job, limiter=limiter)
        except SpadeError as exc:
            errors[index] = exc

    async with anyio.create_task_group() as tg:
        for index, job in enumerate(jobs):
            tg.start_soon(worker, index, job)

    for exc in errors:
        if exc is not None:
            raise exc
    return results


def run_parallel(jobs: list[Callable[[], T]], threads: int | None = None) -> list[T]:
    """Run independent jobs on worker threads; results keep the job order."""
    threads = threads or RuntimeSettings().threads
    logger.debug(f"Running {len(jobs)} jobs on up to {threads} threads")
    return anyio.run(_gather, jobs, threads)


def _write_aggregate(reports: list[EvalReport], out_dir: Path) -> EvalReport:
    aggregate = aggregate_runs(reports)
    out_dir.mkdir(parents=True, exist_ok=True)
    validate_artifacts(
        [
            write_report(aggregate, out_dir / REPORT_JSON),
            write_auc_csv(reports, out_dir / AUC_CSV),
        ]
    )
    return aggregate


def run_experiment(
    cfg: ExperimentConfig, out_dir: str | Path | None = None, threads: int | None = None
) -> EvalReport:
    """prepare + train + evaluate for every configured seed, then aggregate."""
    out_dir = Path(out_dir or cfg.output_dir)
    jobs = [partial(run_seed, cfg, seed, out_dir) for seed in cfg.seeds]
    reports = run_parallel(jobs, threads)
    aggregate = _write_aggregate(reports, out_dir)
    summary = ", ".join(
        f"{m}={aggregate.mean[m]:.4f}±{aggregate.std[m]:.4f}" for m in aggregate.mean
    )
    logger.info(f"{cfg.method} over {aggregate.n_seeds} seeds: {summary}")
    return aggregate


def sweep_config(cfg: ExperimentConfig, parameter: str, value: Any) -> ExperimentConfig:
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(
            f"Cannot sweep '{parameter}'; choose from {sorted(SWEEP_PARAMETERS)}"
        )
    key, _ = SWEEP_PARAMETERS[parameter]
    if key is not None:
        return with_overrides(cfg, {key: value})
    if value not in VARIANTS:
        raise ConfigError(f"Unknown variant '{value}'; choose from {sorted(VARIANTS)}")
    return with_overrides(cfg, VARIANTS[value])


def parse_sweep_values(parameter: str, raw: str | list) -> list[Any]:
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(
            f"Cannot sweep '{parameter}'; choose from {sorted(SWEEP_PARAMETERS)}"
        )
    _, cast = SWEEP_PARAMETERS[parameter]
    items = raw.split(",") if isinstance(raw, str) else list(raw)
    try:
        values = [cast(str(item).strip()) for item in items if str(item).strip()]
    except ValueError as exc:
        raise ConfigError(f"Invalid value for '{parameter}': {exc}") from exc
    if not values:
        raise ConfigError(f"No values given for '{parameter}'")
    return values


def sweep(
    cfg: ExperimentConfig,
    parameter: str,
    values: list[Any],
    out_dir: str | Path | None = None,
    threads: int | None = None,
) -> pd.DataFrame:
    """One row per value: mean and std of each AUC over the configured seeds."""
    out_dir = Path(out_dir or cfg.output_dir)
    configs = [sweep_config(cfg, parameter, value) for value in values]
    jobs = [
        partial(run_seed, sub_cfg, seed, out_dir / f"{parameter}-{value}")
        for value, sub_cfg in zip(values, configs)
        for seed in sub_cfg.seeds
    ]
    reports = run_parallel(jobs, threads)

    rows = []
    offset = 0
    for value, sub_cfg in zip(values, configs):
        group = reports[offset : offset + len(sub_cfg.seeds)]
        offset += len(sub_cfg.seeds)
        aggregate = _write_aggregate(group, out_dir / f"{parameter}-{value}")
        row: dict[str, Any] = {
            "parameter": parameter,
            "value": value,
            "method": sub_cfg.method,
            "n_seeds": aggregate.n_seeds,
        }
        for metric in METRICS:
            row[f"{metric}_mean"] = aggregate.mean.get(metric)
            row[f"{metric}_std"] = aggregate.std.get(metric)
        rows.append(row)

    frame = pd.DataFrame(rows)
    path = out_dir / SWEEP_CSV
    frame.to_csv(path, index=False, lineterminator="\n")
    validate_artifacts([path])
    logger.info(f"Sweep over {parameter} written to {path}")
    return frame


def is_scenario_dir(path: str | Path) -> bool:
    return (Path(path) / MANIFEST_JSON).is_file()
