import numpy as np
import pytest
from scipy.stats import multivariate_normal

from spade_anomaly.errors import OCCFitError, ShapeError
from spade_anomaly.occ import GaussianOCC, fit_gde


def test_fit_gde_matches_gaussian_log_density(rng):
    mixing = np.array([[2.0, 0, 0], [0.5, 1.0, 0], [0, 0.3, 0.5]])
    X = rng.normal(size=(500, 3)) @ mixing
    occ = fit_gde(X)
    np.testing.assert_allclose(occ.mean, X.mean(axis=0))
    np.testing.assert_allclose(occ.covariance, np.cov(X, rowvar=False, bias=True))

    queries = rng.normal(size=(20, 3))
    reference = -multivariate_normal(
        occ.mean, occ.covariance + occ.eps * np.eye(3)
    ).logpdf(queries)
    np.testing.assert_allclose(occ.score_samples(queries), reference, rtol=1e-9)


def test_far_points_score_higher(rng):
    occ = fit_gde(rng.normal(size=(300, 2)))
    near, far = occ.score(np.zeros(2)), occ.score(np.array([6.0, 6.0]))
    assert far > near
    assert occ.mahalanobis(occ.mean[None, :])[0] == pytest.approx(0.0, abs=1e-12)


def test_rank_deficient_covariance_still_factorizes(rng):
    base = rng.normal(size=(100, 2))
    X = np.column_stack([base, base[:, 0]])
    occ = fit_gde(X)
    assert np.isfinite(occ.score_samples(X)).all()
    assert occ.eps > 0


def test_constant_data_fits_with_unit_scale():
    occ = fit_gde(np.ones((10, 2)))
    assert np.isfinite(occ.log_det)


def test_diagonal_covariance(rng):
    X = rng.multivariate_normal([0, 0], [[1.0, 0.8], [0.8, 1.0]], size=400)
    occ = fit_gde(X, diagonal=True)
    assert occ.covariance[0, 1] == 0.0
    assert occ.diagonal


@pytest.mark.parametrize(
    "X",
    [np.zeros((1, 2)), np.array([[0.0, np.nan], [1.0, 2.0]]), np.zeros(5)],
)
def test_fit_gde_rejects_bad_input(X):
    with pytest.raises(OCCFitError):
        fit_gde(X)


def test_mixture_components_not_supported(rng):
    with pytest.raises(OCCFitError):
        fit_gde(rng.normal(size=(10, 2)), n_components=2)


def test_dimension_mismatch(rng):
    occ = fit_gde(rng.normal(size=(50, 2)))
    with pytest.raises(ShapeError):
        occ.score_samples(np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        occ.score(np.zeros((1, 2)))
    assert occ.score_samples(np.empty((0, 2))).shape == (0,)


def test_serialization_preserves_scores(rng):
    X = rng.normal(size=(80, 4))
    occ = fit_gde(X)
    restored = GaussianOCC.from_dict(occ.to_dict())
    np.testing.assert_allclose(restored.score_samples(X), occ.score_samples(X))


def test_law_of_large_numbers_fit(rng):
    occ = fit_gde(rng.normal(size=(10_000, 2)))
    np.testing.assert_allclose(occ.mean, 0.0, atol=0.05)
    np.testing.assert_allclose(np.diag(occ.covariance), 1.0, atol=0.1)


def test_unit_variance_score_offsets():
    occ = GaussianOCC.from_dict(
        {"mean": [3.0], "covariance": [[1.0]], "eps": 1e-12, "n_fit": 2}
    )
    at_mean = occ.score(np.array([3.0]))
    assert at_mean == pytest.approx(0.5 * np.log(2 * np.pi), rel=1e-9)
    assert occ.score(np.array([5.0])) - at_mean == pytest.approx(2.0, rel=1e-9)
    assert occ.score(np.array([1.0])) == pytest.approx(occ.score(np.array([5.0])))


def test_scores_follow_mahalanobis_order(rng):
    mixing = np.array([[1.0, 0.4, 0], [0, 2.0, 0.3], [0, 0, 0.5]])
    X = rng.normal(size=(300, 3)) @ mixing
    occ = fit_gde(X)
    a, b = rng.normal(scale=3.0, size=(2, 500, 3))
    dm = occ.mahalanobis(a) - occ.mahalanobis(b)
    ds = occ.score_samples(a) - occ.score_samples(b)
    clear = np.abs(dm) > 1e-9
    np.testing.assert_array_equal(np.sign(ds[clear]), np.sign(dm[clear]))


def test_translation_leaves_scores_unchanged(rng):
    mixing = np.array([[1.5, 0, 0], [0.3, 1.0, 0], [0, 0.2, 0.7]])
    X = rng.normal(size=(200, 3)) @ mixing
    shift = np.array([3.0, -7.5, 12.0])
    queries = rng.normal(scale=2.0, size=(50, 3))
    original = fit_gde(X).score_samples(queries)
    shifted = fit_gde(X + shift).score_samples(queries + shift)
    np.testing.assert_allclose(shifted, original, rtol=0, atol=1e-8)


def test_fit_is_bitwise_deterministic(rng):
    X = rng.normal(size=(120, 4))
    a, b = fit_gde(X, eps=1e-5), fit_gde(X.copy(), eps=1e-5)
    for field in ("mean", "covariance", "factor"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    assert (a.log_det, a.eps, a.n_fit) == (b.log_det, b.eps, b.n_fit)
