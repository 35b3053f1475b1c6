"""Gaussian distribution estimator (GDE) one-class classifier."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .errors import OCCFitError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-6
MAX_EPS = 1e-2
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GaussianOCC:
    """
    A fitted Gaussian density. `score` is the negative log-density, so larger
    scores are more anomalous.

    `covariance` is the unregularized estimate and `eps` the absolute ridge that
    was added before factorization.
    """

    mean: np.ndarray
    covariance: np.ndarray
    factor: np.ndarray
    log_det: float
    eps: float
    n_fit: int
    diagonal: bool = False

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def mahalanobis(self, X: np.ndarray) -> np.ndarray:
        """Squared Mahalanobis distance of each row under the regularized covariance."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ShapeError(f"GDE fitted on {self.dim} features, got {X.shape[1]}")
        if X.shape[0] == 0:
            return np.empty(0)
        z = solve_triangular(
            self.factor, (X - self.mean).T, lower=True, check_finite=False
        )
        return np.sum(z * z, axis=0)

    def score_samples(self, X: np.ndarray) -> np.ndarray:
        return 0.5 * self.mahalanobis(X) + 0.5 * self.log_det + 0.5 * self.dim * LOG_2PI

    def score(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeError(f"score expects a single vector, got shape {x.shape}")
        return float(self.score_samples(x[None, :])[0])

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "eps": self.eps,
            "n_fit": self.n_fit,
            "diagonal": self.diagonal,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianOCC":
        mean = np.asarray(data["mean"], dtype=np.float64)
        covariance = np.asarray(data["covariance"], dtype=np.float64).reshape(
            mean.shape[0], mean.shape[0]
        )
        factor = _factorize(covariance, float(data["eps"]))
        if factor is None:
            raise OCCFitError("Stored covariance is not positive definite")
        return cls(
            mean=mean,
            covariance=covariance,
            factor=factor,
            log_det=_log_det(factor),
            eps=float(data["eps"]),
            n_fit=int(data["n_fit"]),
            diagonal=bool(data.get("diagonal", False)),
        )


def _factorize(covariance: np.ndarray, eps: float) -> np.ndarray | None:
    ridge = covariance + eps * np.eye(covariance.shape[0])
    try:
        factor = cholesky(ridge, lower=True, check_finite=False)
    except LinAlgError:
        return None
    if not np.all(np.diag(factor) > 0.0) or not np.isfinite(factor).all():
        return None
    return factor


def _log_det(factor: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(factor))))


def fit_gde(
    X: np.ndarray,
    eps: float = DEFAULT_EPS,
    diagonal: bool = False,
    n_components: int = 1,
) -> GaussianOCC:
    """
    Fit a single Gaussian with the biased (denominator n) sample covariance.

    `eps` is relative to the mean diagonal of the covariance; it is raised
    tenfold until the factorization succeeds or it exceeds 1e-2.
    """
    if n_components != 1:
        raise OCCFitError("Only single-component GDE is supported (n_components=1)")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise OCCFitError(f"GDE needs an n x d matrix, got shape {X.shape}")
    n, d = X.shape
    if n < 2:
        raise OCCFitError(f"GDE needs at least 2 samples, got {n}")
    if not np.isfinite(X).all():
        raise OCCFitError("GDE input contains non-finite values")

    mean = X.mean(axis=0)
    centered = X - mean
    covariance = centered.T @ centered / n
    if diagonal:
        covariance = np.diag(np.diag(covariance))
    scale = float(np.mean(np.diag(covariance)))
    if not scale > 0.0:
        scale = 1.0

    relative = eps
    while True:
        factor = _factorize(covariance, relative * scale)
        if factor is not None:
            break
        relative *= 10.0
        if relative > MAX_EPS * (1.0 + 1e-9):
            raise OCCFitError(
                f"Covariance factorization failed up to eps={MAX_EPS} (n={n}, d={d})"
            )
        logger.debug(f"GDE factorization failed, retrying with eps {relative:g}")

    return GaussianOCC(
        mean=mean,
        covariance=covariance,
        factor=factor,
        log_det=_log_det(factor),
        eps=relative * scale,
        n_fit=n,
        diagonal=diagonal,
    )
