"""
Ensemble-of-OCCs pseudo-labeler.

Each of K Gaussian OCCs is fitted on one disjoint part of the unlabeled
representations (plus the labeled normals). An unlabeled sample is
pseudo-anomalous when every OCC scores it above its positive threshold,
pseudo-normal when every OCC scores it below its negative threshold, and
unknown otherwise.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .errors import OCCFitError, PseudoLabelError, ShapeError, ThresholdError
from .occ import DEFAULT_EPS, GaussianOCC, fit_gde
from .scenarios import partition_indices
from .thresholding import MatchingCurve, ScoreSet, matching_curve, otsu_threshold

logger = logging.getLogger(__name__)

POSITIVE = 1
NEGATIVE = 0
UNKNOWN = -1

Vote = Literal["unanimous", "majority"]


@dataclass(frozen=True)
class PseudoLabelerOptions:
    """Switches for the pseudo-labeler. The defaults are the full method; the
    other values reproduce the ablation variants."""

    partial_matching: bool = True
    normals_in_occ: bool = True
    vote: Vote = "unanimous"
    eps: float = DEFAULT_EPS
    diagonal: bool = False
    otsu_bins: int = 256
    max_candidates: int | None = None
    # (eta_p, eta_n) percentiles of unlabeled scores when partial matching is off
    fixed_percentiles: tuple[float, float] = (90.0, 50.0)


@dataclass(frozen=True)
class PseudoLabels:
    labels: np.ndarray
    n_pos: int
    n_neg: int
    n_unknown: int
    n_conflict: int = 0

    def counts(self) -> dict[str, int]:
        return {
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "n_unknown": self.n_unknown,
            "n_conflict": self.n_conflict,
        }


@dataclass(frozen=True, eq=False)
class PseudoLabeler:
    occs: tuple[GaussianOCC, ...]
    eta_p: np.ndarray
    eta_n: np.ndarray
    epoch_seed: int = 0
    vote: Vote = "unanimous"
    methods: tuple[str, str] = ("partial_matching", "partial_matching")
    # matching curves from the build; not serialized
    curves: tuple[MatchingCurve, ...] = field(default=(), repr=False)

    def __post_init__(self):
        eta_p = np.asarray(self.eta_p, dtype=np.float64).reshape(-1)
        eta_n = np.asarray(self.eta_n, dtype=np.float64).reshape(-1)
        k = len(self.occs)
        if k < 1 or eta_p.size != k or eta_n.size != k:
            raise PseudoLabelError(
                f"Need K >= 1 OCCs with one eta_p and eta_n each "
                f"(got {k}, {eta_p.size}, {eta_n.size})"
            )
        if not (np.isfinite(eta_p).all() and np.isfinite(eta_n).all()):
            raise PseudoLabelError("Pseudo-label thresholds must be finite")
        if len({occ.dim for occ in self.occs}) != 1:
            raise PseudoLabelError("All OCCs must share one input dimension")
        if self.vote not in ("unanimous", "majority"):
            raise PseudoLabelError(f"Unknown vote rule '{self.vote}'")
        object.__setattr__(self, "occs", tuple(self.occs))
        object.__setattr__(self, "curves", tuple(self.curves))
        object.__setattr__(self, "eta_p", eta_p)
        object.__setattr__(self, "eta_n", eta_n)

    @property
    def K(self) -> int:
        return len(self.occs)

    @property
    def dim(self) -> int:
        return self.occs[0].dim

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        """Scores of every row under every OCC, shape (n, K)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ShapeError(
                f"Pseudo-labeler expects {self.dim} columns, got {X.shape}"
            )
        if X.shape[0] == 0:
            return np.empty((0, self.K))
        return np.column_stack([occ.score_samples(X) for occ in self.occs])

    def assign_batch(self, X: np.ndarray) -> PseudoLabels:
        return self.labels_from_scores(self.score_matrix(X))

    def labels_from_scores(self, scores: np.ndarray) -> PseudoLabels:
        """Apply the vote rule to an (n, K) matrix from `score_matrix`."""
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[1] != self.K:
            raise ShapeError(
                f"Expected an (n, {self.K}) score matrix, got {scores.shape}"
            )
        pos_votes = np.sum(scores > self.eta_p, axis=1)
        neg_votes = np.sum(scores < self.eta_n, axis=1)
        if self.vote == "unanimous":
            pos, neg = pos_votes == self.K, neg_votes == self.K
        else:
            pos, neg = pos_votes > self.K / 2, neg_votes > self.K / 2
        conflict = pos & neg
        labels = np.full(scores.shape[0], UNKNOWN, dtype=np.int64)
        labels[pos & ~conflict] = POSITIVE
        labels[neg & ~conflict] = NEGATIVE
        n_conflict = int(conflict.sum())
        if n_conflict:
            logger.warning(
                f"{n_conflict} samples met both consensus rules; set to unknown"
            )
        n_pos = int(np.sum(labels == POSITIVE))
        n_neg = int(np.sum(labels == NEGATIVE))
        return PseudoLabels(
            labels=labels,
            n_pos=n_pos,
            n_neg=n_neg,
            n_unknown=labels.size - n_pos - n_neg,
            n_conflict=n_conflict,
        )

    def assign(self, x_repr: np.ndarray) -> int:
        x = np.asarray(x_repr, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeError(f"assign expects one vector, got shape {x.shape}")
        return int(self.assign_batch(x[None, :]).labels[0])

    def diagnostics(self, epoch: int, labels: PseudoLabels | None = None) -> dict:
        record = {
            "epoch": epoch,
            "epoch_seed": self.epoch_seed,
            "eta_p": self.eta_p.tolist(),
            "eta_n": self.eta_n.tolist(),
            "methods": list(self.methods),
        }
        if labels is not None:
            record["counts"] = labels.counts()
            record["conflicts"] = labels.n_conflict
        return record

    def to_dict(self) -> dict:
        return {
            "occs": [occ.to_dict() for occ in self.occs],
            "eta_p": self.eta_p.tolist(),
            "eta_n": self.eta_n.tolist(),
            "epoch_seed": self.epoch_seed,
            "vote": self.vote,
            "methods": list(self.methods),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PseudoLabeler":
        return cls(
            occs=tuple(GaussianOCC.from_dict(o) for o in data["occs"]),
            eta_p=np.asarray(data["eta_p"]),
            eta_n=np.asarray(data["eta_n"]),
            epoch_seed=int(data["epoch_seed"]),
            vote=data["vote"],
            methods=tuple(data["methods"]),
        )


def _as_matrix(X: np.ndarray | None, dim: int) -> np.ndarray:
    if X is None:
        return np.empty((0, dim))
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or (X.shape[0] and X.shape[1] != dim):
        raise ShapeError(f"Expected a matrix with {dim} columns, got shape {X.shape}")
    return X.reshape(X.shape[0], dim)


def _threshold(
    side: str,
    labeled_scores: np.ndarray,
    unlabeled_scores: np.ndarray,
    options: PseudoLabelerOptions,
) -> tuple[float, str, MatchingCurve | None]:
    """Threshold for one side, the method that chose it and its matching curve."""
    if not options.partial_matching:
        q = options.fixed_percentiles[0 if side == "positive" else 1]
        return float(np.percentile(unlabeled_scores, q)), "percentile", None
    unlabeled = ScoreSet(unlabeled_scores)
    if labeled_scores.size == 0:
        return otsu_threshold(unlabeled, options.otsu_bins), "otsu", None
    curve = matching_curve(
        ScoreSet(labeled_scores), unlabeled, side, options.max_candidates
    )
    return curve.best(), "partial_matching", curve


def build(
    labeled_pos_repr: np.ndarray | None,
    labeled_neg_repr: np.ndarray | None,
    unlabeled_repr: np.ndarray,
    K: int = 5,
    seed: int = 0,
    options: PseudoLabelerOptions = PseudoLabelerOptions(),
) -> PseudoLabeler:
    """Fit K OCCs on disjoint unlabeled parts and pick their thresholds."""
    unlabeled = np.asarray(unlabeled_repr, dtype=np.float64)
    if unlabeled.ndim != 2 or unlabeled.shape[0] == 0:
        raise PseudoLabelError("The pseudo-labeler needs a non-empty unlabeled matrix")
    dim = unlabeled.shape[1]
    positives = _as_matrix(labeled_pos_repr, dim)
    negatives = _as_matrix(labeled_neg_repr, dim)
    if positives.shape[0] == 0 and negatives.shape[0] == 0:
        raise PseudoLabelError("Both labeled anomalies and labeled normals are empty")

    parts = partition_indices(unlabeled.shape[0], K, seed)
    occs, eta_p, eta_n = [], [], []
    curves: list[MatchingCurve] = []
    methods = ("", "")
    for k, part in enumerate(parts):
        pool = unlabeled[part]
        if options.normals_in_occ and negatives.shape[0]:
            pool = np.vstack([pool, negatives])
        try:
            occ = fit_gde(pool, eps=options.eps, diagonal=options.diagonal)
        except OCCFitError as exc:
            raise OCCFitError(f"OCC {k}: {exc}", index=k) from exc

        scores_u = occ.score_samples(unlabeled)
        try:
            p, p_method, p_curve = _threshold(
                "positive", occ.score_samples(positives), scores_u, options
            )
            n, n_method, n_curve = _threshold(
                "negative", occ.score_samples(negatives), scores_u, options
            )
        except ThresholdError as exc:
            raise PseudoLabelError(
                f"OCC {k}: threshold selection failed: {exc}"
            ) from exc
        occs.append(occ)
        eta_p.append(p)
        eta_n.append(n)
        methods = (p_method, n_method)
        curves.extend(replace(c, occ=k) for c in (p_curve, n_curve) if c is not None)
        logger.debug(f"OCC {k}: eta_p={p:.4f} ({p_method}), eta_n={n:.4f} ({n_method})")

    return PseudoLabeler(
        occs=tuple(occs),
        eta_p=np.array(eta_p),
        eta_n=np.array(eta_n),
        epoch_seed=seed,
        vote=options.vote,
        methods=methods,
        curves=tuple(curves),
    )
