"""
Training loop for the encoder (h), predictor (q) and reconstruction head (g),
plus the baselines that need no semi-supervised machinery.

Every epoch rebuilds the pseudo-labeler on the current representations, fixes
the pseudo-labels for the epoch, then makes one pass of mini-batch Adam
updates on  L_labeled + alpha * L_pseudo + beta * L_reconstruction.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .config import TrainConfig
from .dataset import Dataset, Label, Scaler
from .errors import OCCFitError, SpadeError, TrainingError
from .neuralnet import (
    MLP,
    OptimState,
    adam_step,
    backward,
    bce_loss,
    forward,
    mse_loss,
)
from .occ import GaussianOCC, fit_gde
from .pseudo_labeler import UNKNOWN, PseudoLabeler, build
from .scenarios import ScenarioSplit

logger = logging.getLogger(__name__)

@dataclass
class EpochRecord:
    epoch: int
    loss_labeled: float
    loss_pseudo: float
    loss_reconstruction: float
    total: float
    n_pos: int = 0
    n_neg: int = 0
    n_unknown: int = 0
    n_conflict: int = 0
    eta_p: list[float] = field(default_factory=list)
    eta_n: list[float] = field(default_factory=list)


@dataclass(eq=False)
class SpadeModel:
    encoder: MLP
    predictor: MLP
    decoder: MLP
    scaler: Scaler
    pseudo_labeler: PseudoLabeler | None = None
    trace: list[EpochRecord] = field(default_factory=list)
    method: str = "spade"
    config: dict = field(default_factory=dict)
    # one PseudoLabeler.diagnostics record per epoch
    pseudo_label_log: list[dict] = field(default_factory=list)
    # (n_unlabeled, K) OCC scores that produced the last epoch's pseudo-labels
    unlabeled_scores: np.ndarray | None = None


@dataclass(eq=False)
class OccModel:
    """GDE baseline; scores are negative log-densities, not probabilities."""

    occ: GaussianOCC
    method: str = "occ"
    config: dict = field(default_factory=dict)


def init_networks(
    in_dim: int, rng: np.random.Generator, min_hidden: int = 1
) -> tuple[MLP, MLP, MLP]:
    hidden = max(min_hidden, math.ceil(in_dim / 2))
    encoder = MLP.initialize([in_dim, hidden, hidden], ["relu", "identity"], rng)
    predictor = MLP.initialize([hidden, 1], ["sigmoid"], rng)
    decoder = MLP.initialize([hidden, in_dim], ["identity"], rng)
    return encoder, predictor, decoder


@dataclass(frozen=True)
class ObjectiveResult:
    loss_labeled: float
    loss_pseudo: float
    loss_reconstruction: float
    total: float
    grads: list[np.ndarray]


def spade_objective(
    encoder: MLP,
    predictor: MLP,
    decoder: MLP,
    X: np.ndarray,
    targets: np.ndarray,
    labeled_mask: np.ndarray,
    pseudo_mask: np.ndarray,
    alpha: float,
    beta: float,
) -> ObjectiveResult:
    """
    Loss and gradients of one batch. `labeled_mask` selects rows in the labeled
    BCE term, `pseudo_mask` the rows with a known pseudo-label; both BCE terms
    are averaged over their own rows. Reconstruction covers every row.
    """
    r, enc_cache = forward(encoder, X)
    p, pred_cache = forward(predictor, r)
    x_hat, dec_cache = forward(decoder, r)

    loss_l, grad_l = bce_loss(p[:, 0], targets, labeled_mask.astype(np.float64))
    loss_u, grad_u = bce_loss(p[:, 0], targets, pseudo_mask.astype(np.float64))
    loss_r, grad_r = mse_loss(x_hat, X)

    pred_grads = backward(predictor, (grad_l + alpha * grad_u)[:, None], pred_cache)
    dec_grads = backward(decoder, beta * grad_r, dec_cache)
    enc_grads = backward(encoder, pred_grads.inputs + dec_grads.inputs, enc_cache)
    return ObjectiveResult(
        loss_labeled=loss_l,
        loss_pseudo=loss_u,
        loss_reconstruction=loss_r,
        total=loss_l + alpha * loss_u + beta * loss_r,
        grads=enc_grads.params + pred_grads.params + dec_grads.params,
    )


def _encode(encoder: MLP, X: np.ndarray) -> np.ndarray:
    if X.shape[0] == 0:
        return np.empty((0, encoder.out_dim))
    return forward(encoder, X)[0]


def _fit_networks(
    X_labeled: np.ndarray,
    y_labeled: np.ndarray,
    X_unlabeled: np.ndarray,
    cfg: TrainConfig,
    scaler: Scaler,
    use_pseudo_labels: bool,
    method: str,
) -> SpadeModel:
    n_l, d = X_labeled.shape
    n_u = X_unlabeled.shape[0]
    rng = np.random.default_rng(cfg.seed)
    encoder, predictor, decoder = init_networks(d, rng, cfg.min_hidden)
    nets = (encoder, predictor, decoder)
    state = OptimState.for_params(
        [p for net in nets for p in net.parameters()], lr=cfg.learning_rate
    )

    X_all = np.vstack([X_labeled, X_unlabeled])
    is_labeled = np.arange(n_l + n_u) < n_l
    y_all = np.concatenate([y_labeled, np.zeros(n_u)]).astype(np.float64)
    positives = y_labeled == Label.ANOMALOUS

    trace: list[EpochRecord] = []
    log: list[dict] = []
    pseudo_labeler: PseudoLabeler | None = None
    scores_u: np.ndarray | None = None
    best = math.inf
    stale = 0
    logger.info(
        f"Training {method}: {n_l} labeled, {n_u} unlabeled, alpha={cfg.alpha}, "
        f"beta={cfg.beta}, K={cfg.k}"
    )
    for epoch in range(1, cfg.max_epochs + 1):
        pseudo = np.full(n_u, UNKNOWN, dtype=np.int64)
        record = EpochRecord(epoch, 0.0, 0.0, 0.0, 0.0, n_unknown=n_u)
        if use_pseudo_labels:
            if epoch == 1 and cfg.warmup_raw_features:
                repr_l, repr_u = X_labeled, X_unlabeled
            else:
                repr_l = _encode(encoder, X_labeled)
                repr_u = _encode(encoder, X_unlabeled)
            try:
                pseudo_labeler = build(
                    repr_l[positives],
                    repr_l[~positives],
                    repr_u,
                    K=cfg.k,
                    seed=cfg.seed + epoch,
                    options=cfg.pseudo_labeler_options(),
                )
                scores_u = pseudo_labeler.score_matrix(repr_u)
                assigned = pseudo_labeler.labels_from_scores(scores_u)
            except SpadeError as exc:
                raise TrainingError(
                    f"Epoch {epoch}: pseudo-labeler failed: {exc}", epoch, trace
                ) from exc
            pseudo = assigned.labels
            record.n_pos, record.n_neg = assigned.n_pos, assigned.n_neg
            record.n_unknown = assigned.n_unknown
            record.n_conflict = assigned.n_conflict
            record.eta_p = pseudo_labeler.eta_p.tolist()
            record.eta_n = pseudo_labeler.eta_n.tolist()
            log.append(pseudo_labeler.diagnostics(epoch, assigned))

        pseudo_all = np.concatenate([np.full(n_l, UNKNOWN), pseudo])
        known = ~is_labeled & (pseudo_all != UNKNOWN)
        # rows that carry no weight in the objective are left out of the batches
        included = is_labeled | (cfg.beta > 0) | (known & (cfg.alpha > 0))
        order = rng.permutation(np.flatnonzero(included))
        targets_all = np.where(is_labeled, y_all, np.where(known, pseudo_all, 0))

        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            result = spade_objective(
                encoder,
                predictor,
                decoder,
                X_all[idx],
                targets_all[idx],
                is_labeled[idx],
                known[idx],
                cfg.alpha,
                cfg.beta,
            )
            if not math.isfinite(result.total):
                raise TrainingError(
                    f"Epoch {epoch}: non-finite loss {result.total}", epoch, trace
                )
            params = [p for net in nets for p in net.parameters()]
            params, state = adam_step(params, result.grads, state)
            offset = 0
            for net in nets:
                count = 2 * len(net.layers)
                net.set_parameters(params[offset : offset + count])
                offset += count
            sums += (
                result.loss_labeled,
                result.loss_pseudo,
                result.loss_reconstruction,
                result.total,
            )
            n_batches += 1

        means = sums / max(n_batches, 1)
        record.loss_labeled, record.loss_pseudo = float(means[0]), float(means[1])
        record.loss_reconstruction, record.total = float(means[2]), float(means[3])
        trace.append(record)
        logger.debug(
            f"Epoch {epoch}: total={record.total:.6f} "
            f"labeled={record.loss_labeled:.6f} "
            f"pseudo={record.loss_pseudo:.6f} recon={record.loss_reconstruction:.6f} "
            f"pseudo-labels +{record.n_pos}/-{record.n_neg}/?{record.n_unknown}"
        )

        if record.total < best - cfg.min_improvement:
            best = record.total
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info(
                    f"{method}: loss stagnant for {stale} epochs, stop at {epoch}"
                )
                break

    return SpadeModel(
        encoder=encoder,
        predictor=predictor,
        decoder=decoder,
        scaler=scaler,
        pseudo_labeler=pseudo_labeler,
        trace=trace,
        method=method,
        config=cfg.model_dump(mode="json"),
        pseudo_label_log=log,
        unlabeled_scores=scores_u,
    )


def _require_binary_labels(ds: Dataset, what: str) -> None:
    if not np.isin(ds.labels, (Label.NORMAL, Label.ANOMALOUS)).all():
        raise TrainingError(f"{what}: labeled data must carry labels 0 or 1")


def train_spade(split: ScenarioSplit, cfg: TrainConfig) -> SpadeModel:
    labeled, unlabeled = split.labeled, split.unlabeled
    if len(unlabeled) == 0:
        raise TrainingError("train_spade needs unlabeled samples")
    if len(labeled) == 0:
        raise TrainingError("train_spade needs at least one labeled sample")
    _require_binary_labels(labeled, "train_spade")
    scaler = Scaler.fit(np.vstack([labeled.features, unlabeled.features]))
    return _fit_networks(
        scaler.transform(labeled.features),
        labeled.labels,
        scaler.transform(unlabeled.features),
        cfg,
        scaler,
        use_pseudo_labels=True,
        method="spade",
    )


def train_supervised(
    labeled: Dataset, cfg: TrainConfig, unlabeled: Dataset | None = None
) -> SpadeModel:
    """BCE on labeled data only. `unlabeled` features, if given, feed the scaler."""
    _require_binary_labels(labeled, "train_supervised")
    if not labeled.anomalous_mask.any():
        raise TrainingError("train_supervised needs at least one labeled anomaly")
    pool = labeled.features
    if unlabeled is not None and len(unlabeled):
        pool = np.vstack([pool, unlabeled.features])
    scaler = Scaler.fit(pool)
    return _fit_networks(
        scaler.transform(labeled.features),
        labeled.labels,
        np.empty((0, labeled.dim)),
        cfg.model_copy(update={"alpha": 0.0, "beta": 0.0}),
        scaler,
        use_pseudo_labels=False,
        method="supervised",
    )


def train_negative_supervised(
    labeled: Dataset, unlabeled: Dataset, cfg: TrainConfig
) -> SpadeModel:
    """BCE on labeled data plus every unlabeled sample as a normal."""
    _require_binary_labels(labeled, "train_negative_supervised")
    if len(unlabeled) == 0:
        model = train_supervised(labeled, cfg)
        model.method = "negative_supervised"
        return model
    features = np.vstack([labeled.features, unlabeled.features])
    targets = np.concatenate([labeled.labels, np.zeros(len(unlabeled), dtype=np.int64)])
    scaler = Scaler.fit(features)
    return _fit_networks(
        scaler.transform(features),
        targets,
        np.empty((0, labeled.dim)),
        cfg.model_copy(update={"alpha": 0.0, "beta": 0.0}),
        scaler,
        use_pseudo_labels=False,
        method="negative_supervised",
    )


def occ_baseline(labeled_normals: Dataset, eps: float = 1e-6) -> GaussianOCC:
    """GDE on the labeled normals."""
    pool = labeled_normals.features[labeled_normals.normal_mask]
    if pool.shape[0] == 0:
        raise OCCFitError("occ baseline: no labeled normal samples")
    return fit_gde(pool, eps=eps)


def negative_occ_baseline(
    labeled_normals: Dataset, unlabeled: Dataset, eps: float = 1e-6
) -> GaussianOCC:
    """GDE on the labeled normals together with every unlabeled sample."""
    pool = np.vstack(
        [labeled_normals.features[labeled_normals.normal_mask], unlabeled.features]
    )
    if pool.shape[0] == 0:
        raise OCCFitError("negative occ baseline: empty normal pool")
    return fit_gde(pool, eps=eps)


def predict_scores(model: SpadeModel | OccModel, X: np.ndarray) -> np.ndarray:
    """Anomaly scores q(h(x)) in [0, 1]; GDE baselines return negative log-densities."""
    X = np.asarray(X, dtype=np.float64)
    if isinstance(model, OccModel):
        return model.occ.score_samples(X)
    if X.shape[0] == 0:
        return np.empty(0)
    r, _ = forward(model.encoder, model.scaler.transform(X))
    return forward(model.predictor, r)[0][:, 0]


def train_method(
    split: ScenarioSplit, method: str, cfg: TrainConfig
) -> SpadeModel | OccModel:
    """Dispatch to SPADE or one of the baselines."""
    if method == "spade":
        return train_spade(split, cfg)
    if method == "supervised":
        return train_supervised(split.labeled, cfg, split.unlabeled)
    if method == "negative_supervised":
        return train_negative_supervised(split.labeled, split.unlabeled, cfg)
    config = cfg.model_dump(mode="json")
    if method == "occ":
        return OccModel(occ_baseline(split.labeled, cfg.occ_eps), "occ", config)
    if method == "negative_occ":
        occ = negative_occ_baseline(split.labeled, split.unlabeled, cfg.occ_eps)
        return OccModel(occ, "negative_occ", config)
    raise TrainingError(f"Unknown method '{method}'")


def trace_frame(model: SpadeModel) -> pd.DataFrame:
    alpha = model.config.get("alpha")
    beta = model.config.get("beta")
    rows = []
    for record in model.trace:
        row = asdict(record)
        eta_p, eta_n = row.pop("eta_p"), row.pop("eta_n")
        row["alpha"], row["beta"] = alpha, beta
        for k, value in enumerate(eta_p):
            row[f"eta_p_{k}"] = value
        for k, value in enumerate(eta_n):
            row[f"eta_n_{k}"] = value
        rows.append(row)
    return pd.DataFrame(rows)


def write_trace_csv(model: SpadeModel, path: str | Path) -> Path:
    path = Path(path)
    trace_frame(model).to_csv(path, index=False, lineterminator="\n")
    return path


def save_checkpoint(model: SpadeModel | OccModel, path: str | Path) -> Path:
    path = Path(path)
    if isinstance(model, OccModel):
        payload = {
            "kind": "occ",
            "method": model.method,
            "config": model.config,
            "occ": model.occ.to_dict(),
        }
    else:
        payload = {
            "kind": "network",
            "method": model.method,
            "config": model.config,
            "scaler": model.scaler.to_dict(),
            "encoder": model.encoder.to_dict(),
            "predictor": model.predictor.to_dict(),
            "decoder": model.decoder.to_dict(),
            "pseudo_labeler": (
                None if model.pseudo_labeler is None else model.pseudo_labeler.to_dict()
            ),
            "trace": [asdict(record) for record in model.trace],
            "pseudo_label_log": model.pseudo_label_log,
            "unlabeled_scores": (
                None
                if model.unlabeled_scores is None
                else model.unlabeled_scores.tolist()
            ),
        }
    path.write_text(json.dumps(payload, sort_keys=True) + "\n")
    return path


def load_checkpoint(path: str | Path) -> SpadeModel | OccModel:
    path = Path(path)
    if not path.is_file():
        raise TrainingError(f"Checkpoint not found: {path}")
    payload = json.loads(path.read_text())
    if payload["kind"] == "occ":
        return OccModel(
            occ=GaussianOCC.from_dict(payload["occ"]),
            method=payload["method"],
            config=payload["config"],
        )
    pl = payload.get("pseudo_labeler")
    scores = payload.get("unlabeled_scores")
    return SpadeModel(
        encoder=MLP.from_dict(payload["encoder"]),
        predictor=MLP.from_dict(payload["predictor"]),
        decoder=MLP.from_dict(payload["decoder"]),
        scaler=Scaler.from_dict(payload["scaler"]),
        pseudo_labeler=None if pl is None else PseudoLabeler.from_dict(pl),
        trace=[EpochRecord(**record) for record in payload["trace"]],
        method=payload["method"],
        config=payload["config"],
        pseudo_label_log=payload.get("pseudo_label_log", []),
        unlabeled_scores=(
            None if scores is None else np.asarray(scores, dtype=np.float64)
        ),
    )
