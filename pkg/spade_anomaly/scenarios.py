"""
Labeled/unlabeled distribution-mismatch scenarios.

Every generator is a pure function of its inputs and seed. The true labels of
unlabeled samples travel in `ScenarioSplit.unlabeled_truth`, which only the
evaluation code reads; training code receives `labeled` and `unlabeled`.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .dataset import Dataset, Label, Scaler
from .errors import DatasetError, OracleError
from .neuralnet import LogisticConfig, fit_logistic, predict_proba

logger = logging.getLogger(__name__)

LABELED_CSV = "labeled.csv"
UNLABELED_CSV = "unlabeled.csv"
TEST_CSV = "test.csv"
MANIFEST_JSON = "manifest.json"

RESERVED_COLUMNS = (
    "sample_id",
    "label",
    "anomaly_type",
    "timestamp",
    "true_label",
    "true_anomaly_type",
)


@dataclass(frozen=True)
class GroundTruth:
    labels: np.ndarray
    anomaly_types: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class ScenarioSplit:
    labeled: Dataset
    unlabeled: Dataset
    test: Dataset | None
    given_types: frozenset[int]
    seed: int
    generator: str
    fractions: dict[str, float] = field(default_factory=dict)
    unlabeled_truth: GroundTruth | None = field(default=None, repr=False)

    def manifest(self, config: dict | None = None) -> dict:
        return {
            "generator": self.generator,
            "seed": self.seed,
            "given_types": sorted(self.given_types),
            "fractions": dict(self.fractions),
            "counts": {
                "labeled": len(self.labeled),
                "labeled_anomalies": int(self.labeled.anomalous_mask.sum()),
                "unlabeled": len(self.unlabeled),
                "test": 0 if self.test is None else len(self.test),
            },
            "feature_names": list(self.labeled.feature_names),
            "config": config or {},
        }


def _require_binary(ds: Dataset, what: str) -> None:
    if len(ds) == 0:
        raise DatasetError(f"{what}: dataset '{ds.name}' is empty")
    if np.any(ds.labels == Label.UNLABELED):
        raise DatasetError(f"{what}: '{ds.name}' still has unconverted labels")


def _require_fraction(name: str, value: float, allow_one: bool = True) -> None:
    upper_ok = value <= 1.0 if allow_one else value < 1.0
    if not (value > 0.0 and upper_ok):
        raise DatasetError(f"{name} must lie in (0, 1], got {value}")


def _build_split(
    source: Dataset,
    labeled_idx: np.ndarray,
    *,
    test: Dataset | None,
    given_types: frozenset[int],
    seed: int,
    generator: str,
    fractions: dict[str, float],
) -> ScenarioSplit:
    labeled_idx = np.sort(np.asarray(labeled_idx, dtype=np.int64))
    mask = np.zeros(len(source), dtype=bool)
    mask[labeled_idx] = True
    labeled = source.subset(labeled_idx, f"{source.name}-labeled")
    hidden = source.masked(~mask)
    unlabeled = Dataset(
        features=hidden.features,
        labels=np.full(len(hidden), int(Label.UNLABELED), dtype=np.int64),
        anomaly_types=None,
        timestamps=hidden.timestamps,
        sample_ids=hidden.sample_ids,
        name=f"{source.name}-unlabeled",
        feature_names=hidden.feature_names,
    )
    split = ScenarioSplit(
        labeled=labeled,
        unlabeled=unlabeled,
        test=test,
        given_types=given_types,
        seed=seed,
        generator=generator,
        fractions=fractions,
        unlabeled_truth=GroundTruth(hidden.labels, hidden.anomaly_types),
    )
    logger.info(
        f"{generator}: {len(labeled)} labeled "
        f"({int(labeled.anomalous_mask.sum())} anomalous), "
        f"{len(unlabeled)} unlabeled"
    )
    return split


def _given_types(train: Dataset, given_types) -> frozenset[int]:
    given = frozenset(int(t) for t in given_types)
    present = train.anomaly_type_set()
    if not given:
        raise DatasetError("given_types must not be empty")
    if not given <= present:
        raise DatasetError(
            f"given_types {sorted(given - present)} not present in '{train.name}' "
            f"(present: {sorted(present)})"
        )
    return given


def scenario_new_anomalies(
    train: Dataset,
    given_types,
    label_frac: float,
    seed: int,
    test: Dataset | None = None,
) -> ScenarioSplit:
    """Label `label_frac` of `train`, drawn only from normals and the given types."""
    _require_binary(train, "scenario_new_anomalies")
    _require_fraction("label_frac", label_frac)
    given = _given_types(train, given_types)

    is_given = train.anomalous_mask & np.isin(train.anomaly_types, sorted(given))
    eligible = np.flatnonzero(train.normal_mask | is_given)
    n_labeled = min(int(round(label_frac * len(train))), eligible.size)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(eligible, size=n_labeled, replace=False)
    if not np.any(train.labels[chosen] == Label.ANOMALOUS):
        raise DatasetError(
            f"label_frac={label_frac} leaves the labeled set without anomalies"
        )
    return _build_split(
        train,
        chosen,
        test=test,
        given_types=given,
        seed=seed,
        generator="new_anomalies",
        fractions={"label_frac": label_frac},
    )


def scenario_pu(
    train: Dataset,
    given_types,
    label_frac: float = 0.5,
    seed: int = 0,
    test: Dataset | None = None,
) -> ScenarioSplit:
    """Label `label_frac` of the given-type anomalies and no normals."""
    _require_binary(train, "scenario_pu")
    _require_fraction("label_frac", label_frac)
    given = _given_types(train, given_types)

    pool = np.flatnonzero(
        train.anomalous_mask & np.isin(train.anomaly_types, sorted(given))
    )
    n_labeled = int(math.floor(label_frac * pool.size))
    if n_labeled == 0:
        raise DatasetError(
            f"label_frac={label_frac} of {pool.size} given-type anomalies is empty"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(pool, size=n_labeled, replace=False)
    return _build_split(
        train,
        chosen,
        test=test,
        given_types=given,
        seed=seed,
        generator="pu",
        fractions={"label_frac": label_frac},
    )


def _oracle_probabilities(train: Dataset, config: LogisticConfig) -> np.ndarray:
    X = Scaler.fit(train.features).transform(train.features)
    y = train.labels.astype(np.float64)
    model = fit_logistic(X, y, config)
    return predict_proba(model, X)


def scenario_easiness(
    train: Dataset,
    top_frac: float = 0.1,
    seed: int = 0,
    test: Dataset | None = None,
    oracle: LogisticConfig | None = None,
) -> ScenarioSplit:
    """Label the most confidently and correctly classified samples of each class."""
    _require_binary(train, "scenario_easiness")
    _require_fraction("top_frac", top_frac)
    proba = _oracle_probabilities(train, oracle or LogisticConfig())
    y = train.labels
    predicted = (proba >= 0.5).astype(np.int64)
    confidence = np.where(y == Label.ANOMALOUS, proba, 1.0 - proba)

    chosen = []
    for cls in (Label.NORMAL, Label.ANOMALOUS):
        candidates = np.flatnonzero((predicted == y) & (y == cls))
        if candidates.size == 0:
            raise OracleError(
                f"Oracle predicted no {cls.name.lower()} sample correctly "
                f"(accuracy {float(np.mean(predicted == y)):.4f}, "
                f"mean confidence {float(confidence.mean()):.4f})"
            )
        # candidates are ascending, so the stable sort breaks ties by index
        ranked = candidates[np.argsort(-confidence[candidates], kind="stable")]
        chosen.append(ranked[: int(math.ceil(top_frac * candidates.size))])

    return _build_split(
        train,
        np.concatenate(chosen),
        test=test,
        given_types=frozenset(train.anomaly_type_set()),
        seed=seed,
        generator="easiness",
        fractions={"top_frac": top_frac},
    )


def scenario_high_risk(
    train: Dataset,
    risk_frac: float = 0.02,
    label_frac_of_risky: float = 0.5,
    seed: int = 0,
    test: Dataset | None = None,
    oracle: LogisticConfig | None = None,
) -> ScenarioSplit:
    """Label a uniform share of the samples the oracle scores as riskiest."""
    _require_binary(train, "scenario_high_risk")
    _require_fraction("risk_frac", risk_frac)
    _require_fraction("label_frac_of_risky", label_frac_of_risky)
    proba = _oracle_probabilities(train, oracle or LogisticConfig())

    n_risky = int(math.ceil(risk_frac * len(train)))
    risky = np.argsort(-proba, kind="stable")[:n_risky]
    n_labeled = int(round(label_frac_of_risky * n_risky))
    if risky.size == 0 or n_labeled == 0:
        raise DatasetError(
            f"risk_frac={risk_frac}, label_frac_of_risky={label_frac_of_risky} "
            "select no samples"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(np.sort(risky), size=n_labeled, replace=False)
    return _build_split(
        train,
        chosen,
        test=test,
        given_types=frozenset(train.anomaly_type_set()),
        seed=seed,
        generator="high_risk",
        fractions={"risk_frac": risk_frac, "label_frac_of_risky": label_frac_of_risky},
    )


def temporal_split(ds: Dataset, test_frac: float, label_frac: float) -> ScenarioSplit:
    """Newest `test_frac` goes to test, the oldest `label_frac` of the rest is
    labeled and the middle is unlabeled."""
    _require_binary(ds, "temporal_split")
    _require_fraction("test_frac", test_frac, allow_one=False)
    _require_fraction("label_frac", label_frac)
    if ds.timestamps is None:
        raise DatasetError(f"temporal_split: '{ds.name}' has no timestamps")
    if np.all(ds.timestamps == ds.timestamps[0]):
        logger.warning("All timestamps are equal; falling back to row order")

    order = np.argsort(ds.timestamps, kind="stable")
    n_test = int(round(test_frac * len(ds)))
    n_train = len(ds) - n_test
    n_labeled = int(round(label_frac * n_train))
    if n_test == 0 or n_train == 0 or n_labeled == 0:
        raise DatasetError(
            f"temporal_split of {len(ds)} rows with test_frac={test_frac}, "
            f"label_frac={label_frac} leaves an empty part"
        )
    train = ds.subset(np.sort(order[:n_train]), f"{ds.name}-train")
    test = ds.subset(np.sort(order[n_train:]), f"{ds.name}-test")
    labeled_ids = set(ds.sample_ids[order[:n_labeled]].tolist())
    labeled_idx = np.flatnonzero(np.isin(train.sample_ids, sorted(labeled_ids)))
    return _build_split(
        train,
        labeled_idx,
        test=test,
        given_types=frozenset(train.subset(labeled_idx).anomaly_type_set()),
        seed=0,
        generator="temporal",
        fractions={"test_frac": test_frac, "label_frac": label_frac},
    )


def partition_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Split range(n) into k disjoint, sorted parts whose sizes differ by at most 1."""
    if k < 1:
        raise DatasetError(f"K must be >= 1, got {k}")
    if n < k:
        raise DatasetError(f"Cannot split {n} samples into {k} non-empty parts")
    permutation = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(permutation, k)]


def partition_disjoint(unlabeled: Dataset, k: int, seed: int) -> list[Dataset]:
    return [
        unlabeled.subset(part, f"{unlabeled.name}-part{i}")
        for i, part in enumerate(partition_indices(len(unlabeled), k, seed))
    ]


def _to_frame(ds: Dataset, truth: GroundTruth | None = None) -> pd.DataFrame:
    clash = set(ds.feature_names) & set(RESERVED_COLUMNS)
    if clash:
        raise DatasetError(
            f"Feature names collide with reserved columns: {sorted(clash)}"
        )
    frame = pd.DataFrame(ds.features, columns=list(ds.feature_names))
    frame.insert(0, "sample_id", ds.sample_ids)
    frame["label"] = ds.labels
    if ds.anomaly_types is not None:
        frame["anomaly_type"] = ds.anomaly_types
    if ds.timestamps is not None:
        frame["timestamp"] = ds.timestamps
    if truth is not None:
        frame["true_label"] = truth.labels
        if truth.anomaly_types is not None:
            frame["true_anomaly_type"] = truth.anomaly_types
    return frame


def _from_frame(frame: pd.DataFrame, name: str) -> tuple[Dataset, GroundTruth | None]:
    feature_names = [c for c in frame.columns if c not in RESERVED_COLUMNS]

    def column(col):
        return frame[col].to_numpy() if col in frame.columns else None

    ds = Dataset(
        features=frame[feature_names].to_numpy(dtype=np.float64).reshape(
            len(frame), len(feature_names)
        ),
        labels=frame["label"].to_numpy(dtype=np.int64),
        anomaly_types=column("anomaly_type"),
        timestamps=column("timestamp"),
        sample_ids=frame["sample_id"].to_numpy(dtype=np.int64),
        name=name,
        feature_names=tuple(feature_names),
    )
    truth = None
    if "true_label" in frame.columns:
        truth = GroundTruth(
            labels=frame["true_label"].to_numpy(dtype=np.int64),
            anomaly_types=column("true_anomaly_type"),
        )
    return ds, truth


def write_scenario(
    split: ScenarioSplit, directory: str | Path, config: dict | None = None
) -> list[Path]:
    """Write labeled/unlabeled/test CSVs and a manifest; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    parts = [
        (LABELED_CSV, split.labeled, None),
        (UNLABELED_CSV, split.unlabeled, split.unlabeled_truth),
    ]
    if split.test is not None:
        parts.append((TEST_CSV, split.test, None))
    for filename, ds, truth in parts:
        path = directory / filename
        _to_frame(ds, truth).to_csv(path, index=False, lineterminator="\n")
        written.append(path)
    manifest_path = directory / MANIFEST_JSON
    manifest_path.write_text(
        json.dumps(split.manifest(config), indent=2, sort_keys=True) + "\n"
    )
    written.append(manifest_path)
    logger.info(
        f"Wrote scenario '{split.generator}' (seed {split.seed}) to {directory}"
    )
    return written


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST_JSON
    if not path.is_file():
        raise DatasetError(f"Scenario manifest not found: {path}")
    return json.loads(path.read_text())


def read_scenario(directory: str | Path) -> ScenarioSplit:
    directory = Path(directory)
    manifest = read_manifest(directory)
    labeled, _ = _from_frame(pd.read_csv(directory / LABELED_CSV), "labeled")
    unlabeled, truth = _from_frame(pd.read_csv(directory / UNLABELED_CSV), "unlabeled")
    test = None
    if (directory / TEST_CSV).is_file():
        test, _ = _from_frame(pd.read_csv(directory / TEST_CSV), "test")
    return ScenarioSplit(
        labeled=labeled,
        unlabeled=unlabeled,
        test=test,
        given_types=frozenset(manifest["given_types"]),
        seed=int(manifest["seed"]),
        generator=manifest["generator"],
        fractions=manifest["fractions"],
        unlabeled_truth=truth,
    )
