from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from scipy.stats import wasserstein_distance

from spade_anomaly.errors import ThresholdError
from spade_anomaly.thresholding import (
    ScoreSet,
    candidate_grid,
    matching_curve,
    otsu_threshold,
    partial_match_negative,
    partial_match_positive,
    wasserstein1,
    write_curves_csv,
)


def _quantile_integral(a, b, steps=1000):
    """W1 as a midpoint sum of |Fa^-1(q) - Fb^-1(q)| over a q-grid."""
    a, b = np.sort(a), np.sort(b)
    q = (np.arange(steps) + 0.5) / steps
    qa = a[np.ceil(q * a.size).astype(int) - 1]
    qb = b[np.ceil(q * b.size).astype(int) - 1]
    return float(np.mean(np.abs(qa - qb)))


def test_wasserstein_examples():
    assert wasserstein1(ScoreSet([0, 1]), ScoreSet([1, 2])) == pytest.approx(1.0)
    assert wasserstein1(ScoreSet([0]), ScoreSet([0, 0, 10])) == pytest.approx(10 / 3)
    same = ScoreSet([3.0, 1.0, 2.0])
    assert wasserstein1(same, same) == 0.0


@pytest.mark.parametrize("sizes", [(4, 5), (8, 10), (20, 25), (1, 40)])
def test_wasserstein_matches_quantile_integration(rng, sizes):
    a = rng.normal(size=sizes[0])
    b = rng.normal(1.0, 2.0, size=sizes[1])
    expected = _quantile_integral(a, b)
    assert wasserstein1(ScoreSet(a), ScoreSet(b)) == pytest.approx(expected, abs=1e-6)


def test_wasserstein_metric_properties(rng):
    for _ in range(20):
        a, b, c = (ScoreSet(rng.normal(size=rng.integers(1, 30))) for _ in range(3))
        ab = wasserstein1(a, b)
        assert ab == pytest.approx(wasserstein1(b, a))
        assert ab >= 0
        assert ab <= wasserstein1(a, c) + wasserstein1(c, b) + 1e-9
        shifted = wasserstein1(ScoreSet(a.values + 3.5), ScoreSet(b.values + 3.5))
        assert shifted == pytest.approx(ab, abs=1e-9)


def test_score_set_validation():
    with pytest.raises(ThresholdError):
        ScoreSet([])
    with pytest.raises(ThresholdError):
        ScoreSet([1.0, np.inf])
    np.testing.assert_array_equal(ScoreSet([3, 1, 2]).values, [1, 2, 3])


def test_candidate_grid():
    grid = candidate_grid(ScoreSet([0, 1, 10, 11]))
    np.testing.assert_allclose(grid, [-11, 0.5, 5.5, 10.5, 22])
    capped = candidate_grid(ScoreSet(np.arange(100.0)), max_candidates=10)
    assert capped.size == 10
    assert capped[0] < 0 and capped[-1] > 99


def test_partial_match_examples():
    unlabeled = ScoreSet([0, 1, 10, 11])
    eta_p = partial_match_positive(ScoreSet([10, 11]), unlabeled)
    assert 1 < eta_p <= 10
    eta_n = partial_match_negative(ScoreSet([0, 1]), unlabeled)
    assert 1 <= eta_n < 10


def test_partial_match_identical_distribution_keeps_everything(rng):
    values = rng.normal(size=50)
    grid = candidate_grid(ScoreSet(values))
    assert partial_match_positive(ScoreSet(values), ScoreSet(values)) == grid[0]
    assert partial_match_negative(ScoreSet(values), ScoreSet(values)) == grid[-1]


def test_partial_match_negative_single_value_at_minimum():
    unlabeled = ScoreSet([0.0, 2.0, 4.0, 6.0])
    eta_n = partial_match_negative(ScoreSet([0.0]), unlabeled)
    assert 0.0 < eta_n < 2.0


def test_partial_match_far_labeled_picks_top_points():
    unlabeled = ScoreSet(np.arange(10.0))
    eta_p = partial_match_positive(ScoreSet([100.0]), unlabeled)
    assert 8.0 < eta_p < 9.0


@pytest.mark.parametrize("side", ["positive", "negative"])
def test_partial_match_is_grid_optimal(rng, side):
    for _ in range(25):
        u = rng.normal(size=rng.integers(2, 200))
        labeled = rng.normal(rng.uniform(-1, 1), 0.5, size=rng.integers(1, 30))
        curve = matching_curve(ScoreSet(labeled), ScoreSet(u), side)
        best = curve.best()
        assert best in curve.thresholds
        # independent re-scan of every candidate
        distances = []
        for eta in curve.thresholds:
            chosen = u[u > eta] if side == "positive" else u[u < eta]
            distances.append(
                wasserstein_distance(labeled, chosen) if chosen.size else np.inf
            )
        picked = curve.distances[np.flatnonzero(curve.thresholds == best)[0]]
        assert picked == pytest.approx(min(distances), abs=1e-12)


@pytest.mark.parametrize("side", ["positive", "negative"])
def test_matching_curve_equals_scipy_at_every_candidate(rng, side):
    for integers in (False, True):
        if integers:
            u = rng.integers(0, 8, size=60).astype(float)
            labeled = rng.integers(2, 6, size=9).astype(float)
        else:
            u = rng.normal(size=300)
            labeled = rng.normal(0.5, 0.7, size=25)
        curve = matching_curve(ScoreSet(labeled), ScoreSet(u), side)
        for eta, distance in zip(curve.thresholds, curve.distances):
            chosen = u[u > eta] if side == "positive" else u[u < eta]
            if chosen.size == 0:
                assert distance == np.inf
            else:
                expected = wasserstein_distance(labeled, chosen)
                assert distance == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_partial_match_all_infeasible_raises():
    curve = matching_curve(ScoreSet([1.0]), ScoreSet([1.0]), "positive")
    curve.distances[:] = np.inf
    with pytest.raises(ThresholdError):
        curve.best()


def test_otsu_bimodal():
    scores = ScoreSet([0, 0, 0, 10, 10, 10])
    t = otsu_threshold(scores)
    assert 0 < t < 10


def test_otsu_two_gaussians(rng):
    scores = np.concatenate([rng.normal(0, 1, 500), rng.normal(6, 1, 500)])
    assert 2.0 <= otsu_threshold(ScoreSet(scores)) <= 4.0


def _otsu_by_loop(values, bins):
    hist, edges = np.histogram(values, bins=bins, range=(values.min(), values.max()))
    centers = (edges[:-1] + edges[1:]) / 2
    best, best_edge = -np.inf, None
    for i in range(1, bins):
        w0, w1 = hist[:i].sum(), hist[i:].sum()
        if w0 == 0 or w1 == 0:
            continue
        mu0 = (hist[:i] * centers[:i]).sum() / w0
        mu1 = (hist[i:] * centers[i:]).sum() / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
        if between > best * (1 + 1e-12):
            best, best_edge = between, edges[i]
    return best_edge


@pytest.mark.parametrize("bins", [8, 32, 256])
def test_otsu_matches_exhaustive_search(rng, bins):
    for _ in range(10):
        values = np.concatenate(
            [rng.normal(0, 1, 300), rng.normal(rng.uniform(2, 8), 1.5, 200)]
        )
        assert otsu_threshold(ScoreSet(values), bins) == _otsu_by_loop(values, bins)


def test_otsu_rejects_constant_scores():
    with pytest.raises(ThresholdError):
        otsu_threshold(ScoreSet([2.0, 2.0, 2.0]))


def test_write_curves_csv(tmp_path):
    curve = matching_curve(ScoreSet([10, 11]), ScoreSet([0, 1, 10, 11]), "positive")
    path = write_curves_csv([curve], tmp_path / "curves.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["side", "threshold", "distance"]
    assert len(frame) == curve.thresholds.size

    tagged = replace(curve, occ=3)
    frame = pd.read_csv(write_curves_csv([tagged, curve], tmp_path / "tagged.csv"))
    assert frame.columns[0] == "occ"
    assert (frame["occ"].iloc[: curve.thresholds.size] == 3).all()
    assert frame["occ"].iloc[curve.thresholds.size :].isna().all()
