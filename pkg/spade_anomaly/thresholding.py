"""
Threshold selection on 1-D anomaly scores.

Partial matching picks the threshold whose selected unlabeled scores are
closest, in 1-D Wasserstein distance, to the labeled scores of one class.
Otsu's method covers the class that has no labeled samples.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from scipy.stats import wasserstein_distance

from .errors import ThresholdError

logger = logging.getLogger(__name__)

Side = Literal["positive", "negative"]
TIE_TOLERANCE = 1e-12
# candidate rows per block when evaluating a matching curve
CURVE_CHUNK = 256


@dataclass(frozen=True, init=False)
class ScoreSet:
    values: np.ndarray

    def __init__(self, values):
        array = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
        if array.size == 0:
            raise ThresholdError("A score set must not be empty")
        if not np.isfinite(array).all():
            raise ThresholdError("A score set must contain only finite values")
        object.__setattr__(self, "values", array)

    def __len__(self) -> int:
        return self.values.size


def wasserstein1(a: ScoreSet, b: ScoreSet) -> float:
    """W1 between two empirical distributions: area between the quantile functions."""
    if len(a) == 0 or len(b) == 0:
        raise ThresholdError("wasserstein1 needs two non-empty score sets")
    return float(wasserstein_distance(a.values, b.values))


def candidate_grid(
    unlabeled: ScoreSet, max_candidates: int | None = None
) -> np.ndarray:
    """
    Midpoints between consecutive unique scores, plus one point below the
    minimum and one above the maximum. With `max_candidates`, an evenly spaced
    subset that keeps both end points is returned.
    """
    unique = np.unique(unlabeled.values)
    margin = max(float(unique[-1] - unique[0]), 1.0)
    grid = np.concatenate(
        [
            [unique[0] - margin],
            (unique[:-1] + unique[1:]) / 2.0,
            [unique[-1] + margin],
        ]
    )
    if max_candidates is not None and grid.size > max_candidates:
        if max_candidates < 2:
            raise ThresholdError("max_candidates must be at least 2")
        picks = np.unique(np.round(np.linspace(0, grid.size - 1, max_candidates)))
        grid = grid[picks.astype(np.int64)]
    return grid


@dataclass(frozen=True)
class MatchingCurve:
    side: Side
    thresholds: np.ndarray
    distances: np.ndarray
    occ: int | None = None

    def best(self) -> float:
        if not np.isfinite(self.distances).any():
            raise ThresholdError(f"Every {self.side} candidate threshold is infeasible")
        best = np.min(self.distances)
        ties = np.flatnonzero(self.distances <= best + TIE_TOLERANCE * (1.0 + best))
        # positive: prefer the larger threshold, negative: the smaller one
        pick = ties[-1] if self.side == "positive" else ties[0]
        return float(self.thresholds[pick])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "side": self.side,
                "threshold": self.thresholds,
                "distance": self.distances,
            }
        )
        if self.occ is not None:
            frame.insert(0, "occ", self.occ)
        return frame


def _curve_distances(
    labeled: np.ndarray, u: np.ndarray, grid: np.ndarray, side: Side
) -> np.ndarray:
    """
    Exact W1 for every candidate at once, as the area between CDFs on the
    merged support. The selected set is a suffix (positive) or prefix
    (negative) of the sorted unlabeled scores, so its CDF follows from the
    running count of unlabeled scores.
    """
    n = u.size
    support = np.sort(np.concatenate([labeled, u]))
    widths = np.diff(support)
    points = support[:-1]
    cdf_labeled = np.searchsorted(labeled, points, side="right") / labeled.size
    counts = np.searchsorted(u, points, side="right").astype(np.float64)
    if side == "positive":
        cut = np.searchsorted(u, grid, side="right")
        sizes = n - cut
    else:
        cut = np.searchsorted(u, grid, side="left")
        sizes = cut
    distances = np.full(grid.size, np.inf)
    for start in range(0, grid.size, CURVE_CHUNK):
        rows = slice(start, start + CURVE_CHUNK)
        c = cut[rows, None].astype(np.float64)
        s = sizes[rows, None].astype(np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            if side == "positive":
                cdf_selected = np.clip(counts - c, 0.0, None) / s
            else:
                cdf_selected = np.minimum(counts, c) / s
        distances[rows] = np.abs(cdf_selected - cdf_labeled) @ widths
    distances[sizes == 0] = np.inf
    return distances


def matching_curve(
    labeled: ScoreSet,
    unlabeled: ScoreSet,
    side: Side,
    max_candidates: int | None = None,
) -> MatchingCurve:
    """W1 from `labeled` to the unlabeled scores above (positive) or below
    (negative) each candidate threshold; empty selections are +inf."""
    grid = candidate_grid(unlabeled, max_candidates)
    distances = _curve_distances(labeled.values, unlabeled.values, grid, side)
    return MatchingCurve(side=side, thresholds=grid, distances=distances)


def partial_match_positive(
    labeled_pos_scores: ScoreSet,
    unlabeled_scores: ScoreSet,
    max_candidates: int | None = None,
) -> float:
    curve = matching_curve(
        labeled_pos_scores, unlabeled_scores, "positive", max_candidates
    )
    return curve.best()


def partial_match_negative(
    labeled_neg_scores: ScoreSet,
    unlabeled_scores: ScoreSet,
    max_candidates: int | None = None,
) -> float:
    curve = matching_curve(
        labeled_neg_scores, unlabeled_scores, "negative", max_candidates
    )
    return curve.best()


def otsu_threshold(scores: ScoreSet, bins: int = 256) -> float:
    """
    Histogram Otsu: the bin edge that maximizes between-class variance, with
    class statistics taken from bin centers. Ties go to the smallest edge.
    """
    if bins < 2:
        raise ThresholdError(f"Otsu needs at least 2 bins, got {bins}")
    values = scores.values
    lo, hi = float(values[0]), float(values[-1])
    if lo == hi:
        raise ThresholdError("Otsu needs at least two distinct scores")
    hist, edges = np.histogram(values, bins=bins, range=(lo, hi))
    hist = hist.astype(np.float64)
    centers = (edges[:-1] + edges[1:]) / 2.0

    w0 = np.cumsum(hist)[:-1]
    w1 = hist.sum() - w0
    s0 = np.cumsum(hist * centers)[:-1]
    s1 = float(np.sum(hist * centers)) - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (s0 / w0 - s1 / w1) ** 2
    between[(w0 == 0) | (w1 == 0)] = -np.inf
    return float(edges[int(np.argmax(between)) + 1])


def write_curves_csv(curves: list[MatchingCurve], path: str | Path) -> Path:
    path = Path(path)
    frame = pd.concat([c.to_frame() for c in curves], ignore_index=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path
