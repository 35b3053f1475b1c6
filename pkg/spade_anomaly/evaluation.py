"""AUC reports, pseudo-label precision curves and multi-seed aggregation."""

import logging
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.stats import rankdata
from sklearn.metrics import roc_auc_score

from .dataset import Dataset, Label
from .errors import EvaluationError
from .pseudo_labeler import PseudoLabeler

logger = logging.getLogger(__name__)

METRICS = ("overall_auc", "given_auc", "missed_auc")
PERCENTILE_GRID: tuple[float, ...] = tuple(range(50, 100, 5)) + (99,)


class CurvePoint(BaseModel):
    percentile: float
    precision: float | None = None
    n_selected: int = 0


class PrecisionCurves(BaseModel):
    anomalous: list[CurvePoint] = Field(default_factory=list)
    normal: list[CurvePoint] = Field(default_factory=list)
    eta_p_percentiles: list[float] = Field(default_factory=list)
    eta_n_percentiles: list[float] = Field(default_factory=list)


class EvalReport(BaseModel):
    method: str = ""
    seed: int | None = None
    overall_auc: float | None = Field(None, ge=0.0, le=1.0)
    given_auc: float | None = Field(None, ge=0.0, le=1.0)
    missed_auc: float | None = Field(None, ge=0.0, le=1.0)
    n_normal: int = 0
    n_given: int = 0
    n_missed: int = 0
    precision_curves: PrecisionCurves | None = None
    n_seeds: int = 1
    mean: dict[str, float] = Field(default_factory=dict)
    std: dict[str, float] = Field(default_factory=dict)


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """ROC AUC; tied scores get half credit."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise EvaluationError(
            f"{scores.size} scores but {labels.size} labels"
        )
    if not np.isin(labels, (0, 1)).all():
        raise EvaluationError("AUC labels must be 0 or 1")
    if np.unique(labels).size < 2:
        raise EvaluationError("AUC needs both normal and anomalous samples")
    if not np.isfinite(scores).all():
        raise EvaluationError("AUC scores must be finite")
    return float(roc_auc_score(labels, scores))


def evaluate_splits(
    scores: np.ndarray, test: Dataset, given_types, method: str = "", seed=None
) -> EvalReport:
    """
    Overall AUC plus AUC restricted to given and to missed anomaly types, each
    pooled with every test normal. A side without anomalies is left as None.
    """
    if len(test) == 0:
        raise EvaluationError("The test set is empty")
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size != len(test):
        raise EvaluationError(f"{scores.size} scores for {len(test)} test samples")
    if test.anomaly_types is None:
        raise EvaluationError("The test set carries no anomaly types")
    normals = test.normal_mask
    anomalies = test.anomalous_mask
    if not normals.any() or not anomalies.any():
        raise EvaluationError("The test set needs normal and anomalous samples")

    given = np.isin(test.anomaly_types, sorted(int(t) for t in given_types))
    given_mask = anomalies & given
    missed_mask = anomalies & ~given
    labels = test.labels

    def side(mask: np.ndarray) -> float | None:
        if not mask.any():
            return None
        keep = normals | mask
        return auc(scores[keep], labels[keep])

    report = EvalReport(
        method=method,
        seed=seed,
        overall_auc=auc(scores, labels),
        given_auc=side(given_mask),
        missed_auc=side(missed_mask),
        n_normal=int(normals.sum()),
        n_given=int(given_mask.sum()),
        n_missed=int(missed_mask.sum()),
    )
    logger.info(
        f"{method or 'model'} seed={seed}: overall={report.overall_auc:.4f} "
        f"given={_fmt(report.given_auc)} missed={_fmt(report.missed_auc)}"
    )
    return report


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def _percentile_ranks(scores: np.ndarray) -> np.ndarray:
    # share of the column at or below each value, in percent
    return 100.0 * rankdata(scores, method="max", axis=0) / scores.shape[0]


def precision_curve(
    pl: PseudoLabeler,
    truth_labels: np.ndarray,
    occ_scores: np.ndarray,
    grid: tuple[float, ...] = PERCENTILE_GRID,
) -> PrecisionCurves:
    """
    Precision of "anomalous" among unlabeled samples whose mean-over-OCC
    percentile exceeds p, and of "normal" among those below p. `occ_scores`
    is the (n, K) score matrix of the unlabeled samples.
    """
    occ_scores = np.asarray(occ_scores, dtype=np.float64)
    truth = np.asarray(truth_labels).reshape(-1)
    if occ_scores.ndim != 2 or occ_scores.shape[0] == 0:
        raise EvaluationError("precision_curve needs a non-empty (n, K) score matrix")
    if occ_scores.shape[0] != truth.size or occ_scores.shape[1] != pl.K:
        raise EvaluationError(
            f"Score matrix {occ_scores.shape} does not match {truth.size} labels "
            f"and K={pl.K}"
        )
    if not np.all(np.diff(grid) > 0):
        raise EvaluationError("Percentile grid must be strictly increasing")

    mean_pct = _percentile_ranks(occ_scores).mean(axis=1)
    curves = PrecisionCurves()
    for p in grid:
        for selected, target, points in (
            (mean_pct > p, Label.ANOMALOUS, curves.anomalous),
            (mean_pct < p, Label.NORMAL, curves.normal),
        ):
            n = int(selected.sum())
            precision = float(np.mean(truth[selected] == target)) if n else None
            points.append(
                CurvePoint(percentile=float(p), precision=precision, n_selected=n)
            )
    empty = [pt.percentile for pt in curves.anomalous if pt.n_selected == 0]
    if empty:
        logger.warning(f"No samples above percentiles {empty}")

    n = occ_scores.shape[0]
    for k in range(pl.K):
        column = occ_scores[:, k]
        below_p = float(np.sum(column <= pl.eta_p[k]))
        below_n = float(np.sum(column < pl.eta_n[k]))
        curves.eta_p_percentiles.append(100.0 * below_p / n)
        curves.eta_n_percentiles.append(100.0 * below_n / n)
    return curves


def aggregate_runs(reports: list[EvalReport]) -> EvalReport:
    """Mean and population standard deviation of each AUC over runs."""
    if not reports:
        raise EvaluationError("No reports to aggregate")
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for metric in METRICS:
        values = [getattr(r, metric) for r in reports if getattr(r, metric) is not None]
        if values:
            mean[metric] = float(np.mean(values))
            std[metric] = float(np.std(values))
    return EvalReport(
        method=reports[0].method,
        overall_auc=mean.get("overall_auc"),
        given_auc=mean.get("given_auc"),
        missed_auc=mean.get("missed_auc"),
        n_normal=reports[0].n_normal,
        n_given=reports[0].n_given,
        n_missed=reports[0].n_missed,
        n_seeds=len(reports),
        mean=mean,
        std=std,
    )


def auc_frame(reports: list[EvalReport]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"method": r.method, "seed": r.seed, **{m: getattr(r, m) for m in METRICS}}
         for r in reports],
        columns=["method", "seed", *METRICS],
    )


def write_report(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(report.model_dump_json(indent=2) + "\n")
    return path


def read_report(path: str | Path) -> EvalReport:
    path = Path(path)
    if not path.is_file():
        raise EvaluationError(f"Report not found: {path}")
    return EvalReport.model_validate_json(path.read_text())


def write_auc_csv(reports: list[EvalReport], path: str | Path) -> Path:
    path = Path(path)
    auc_frame(reports).to_csv(path, index=False, lineterminator="\n")
    return path


def write_precision_csv(curves: PrecisionCurves, path: str | Path) -> Path:
    rows = [
        {"class": name, **point.model_dump()}
        for name, points in (("anomalous", curves.anomalous), ("normal", curves.normal))
        for point in points
    ]
    path = Path(path)
    columns = ["class", "percentile", "precision", "n_selected"]
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, lineterminator="\n")
    return path
