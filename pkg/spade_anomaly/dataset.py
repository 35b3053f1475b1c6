"""
Tabular datasets for semi-supervised anomaly detection.

A `Dataset` stores its samples column-wise as numpy arrays. Per-sample views
(`Sample`) are produced on demand when iterating.
"""

import logging
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from .errors import DatasetError

logger = logging.getLogger(__name__)

SCALE_FLOOR = 1e-8


class Label(IntEnum):
    NORMAL = 0
    ANOMALOUS = 1
    UNLABELED = -1


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: Label
    anomaly_type: int | None = None
    timestamp: float | None = None
    sample_id: int = 0


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Feature matrix with per-sample labels, optional anomaly types and timestamps.

    `sample_ids` identify rows across views of the same source so that splits
    can be checked for disjointness.
    """

    features: np.ndarray
    labels: np.ndarray
    anomaly_types: np.ndarray | None = None
    timestamps: np.ndarray | None = None
    sample_ids: np.ndarray | None = None
    name: str = "dataset"
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] < 1:
            raise DatasetError(
                f"Dataset '{self.name}' needs an n x d feature matrix with d >= 1, "
                f"got shape {features.shape}"
            )
        n = features.shape[0]
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != n:
            raise DatasetError(
                f"Dataset '{self.name}' has {n} rows but {labels.shape[0]} labels"
            )
        if not np.isin(labels, [Label.NORMAL, Label.ANOMALOUS, Label.UNLABELED]).all():
            raise DatasetError(f"Dataset '{self.name}' has labels outside {{0, 1, -1}}")

        anomaly_types = self.anomaly_types
        if anomaly_types is not None:
            anomaly_types = np.asarray(anomaly_types, dtype=np.int64).reshape(-1)
            if anomaly_types.shape[0] != n:
                raise DatasetError(
                    f"Dataset '{self.name}': anomaly_types length mismatch"
                )
            if np.any(anomaly_types[labels == Label.ANOMALOUS] == 0):
                raise DatasetError(
                    f"Dataset '{self.name}': anomalous samples need a nonzero "
                    "anomaly type"
                )

        timestamps = self.timestamps
        if timestamps is not None:
            timestamps = np.asarray(timestamps, dtype=np.float64).reshape(-1)
            if timestamps.shape[0] != n:
                raise DatasetError(f"Dataset '{self.name}': timestamps length mismatch")

        sample_ids = self.sample_ids
        if sample_ids is None:
            sample_ids = np.arange(n, dtype=np.int64)
        else:
            sample_ids = np.asarray(sample_ids, dtype=np.int64).reshape(-1)
            if sample_ids.shape[0] != n:
                raise DatasetError(f"Dataset '{self.name}': sample_ids length mismatch")

        feature_names = tuple(self.feature_names) or tuple(
            f"x{j}" for j in range(features.shape[1])
        )
        if len(feature_names) != features.shape[1]:
            raise DatasetError(f"Dataset '{self.name}': feature_names length mismatch")

        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "anomaly_types", anomaly_types)
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "sample_ids", sample_ids)
        object.__setattr__(self, "feature_names", feature_names)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __getitem__(self, index: int) -> Sample:
        anomaly_type = None
        if self.anomaly_types is not None:
            anomaly_type = int(self.anomaly_types[index])
        timestamp = None
        if self.timestamps is not None:
            timestamp = float(self.timestamps[index])
        return Sample(
            features=self.features[index],
            label=Label(int(self.labels[index])),
            anomaly_type=anomaly_type,
            timestamp=timestamp,
            sample_id=int(self.sample_ids[index]),
        )

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_samples(
        cls,
        samples: Sequence[Sample],
        name: str = "dataset",
        feature_names: Sequence[str] = (),
    ) -> "Dataset":
        if not samples:
            raise DatasetError("Cannot build a dataset from zero samples")
        has_types = all(s.anomaly_type is not None for s in samples)
        has_times = all(s.timestamp is not None for s in samples)
        return cls(
            features=np.vstack(
                [np.asarray(s.features, dtype=np.float64) for s in samples]
            ),
            labels=np.array([int(s.label) for s in samples]),
            anomaly_types=(
                np.array([s.anomaly_type for s in samples]) if has_types else None
            ),
            timestamps=np.array([s.timestamp for s in samples]) if has_times else None,
            sample_ids=np.array([s.sample_id for s in samples]),
            name=name,
            feature_names=tuple(feature_names),
        )

    def subset(
        self, indices: Iterable[int] | np.ndarray, name: str | None = None
    ) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            anomaly_types=(
                None if self.anomaly_types is None else self.anomaly_types[idx]
            ),
            timestamps=None if self.timestamps is None else self.timestamps[idx],
            sample_ids=self.sample_ids[idx],
            name=name or self.name,
            feature_names=self.feature_names,
        )

    def with_labels(self, labels: np.ndarray, name: str | None = None) -> "Dataset":
        return replace(self, labels=labels, name=name or self.name)

    def masked(self, mask: np.ndarray, name: str | None = None) -> "Dataset":
        return self.subset(np.flatnonzero(mask), name)

    @property
    def normal_mask(self) -> np.ndarray:
        return self.labels == Label.NORMAL

    @property
    def anomalous_mask(self) -> np.ndarray:
        return self.labels == Label.ANOMALOUS

    def anomaly_type_set(self) -> set[int]:
        if self.anomaly_types is None:
            return set()
        return {int(t) for t in np.unique(self.anomaly_types[self.anomalous_mask])}

    @staticmethod
    def concat(parts: Sequence["Dataset"], name: str = "dataset") -> "Dataset":
        parts = [p for p in parts if len(p) > 0]
        if not parts:
            raise DatasetError("Cannot concatenate zero non-empty datasets")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise DatasetError(
                f"Cannot concatenate datasets of dimensions {sorted(dims)}"
            )
        has_types = all(p.anomaly_types is not None for p in parts)
        has_times = all(p.timestamps is not None for p in parts)
        return Dataset(
            features=np.vstack([p.features for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            anomaly_types=(
                np.concatenate([p.anomaly_types for p in parts]) if has_types else None
            ),
            timestamps=(
                np.concatenate([p.timestamps for p in parts]) if has_times else None
            ),
            sample_ids=np.concatenate([p.sample_ids for p in parts]),
            name=name,
            feature_names=parts[0].feature_names,
        )


def empty_like(ds: Dataset, name: str | None = None) -> Dataset:
    """Zero-row dataset with the same columns as `ds`."""
    return ds.subset(np.array([], dtype=np.int64), name)


@dataclass(frozen=True)
class Scaler:
    """Per-feature z-score transform; standard deviations are floored at 1e-8."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Scaler":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DatasetError(
                f"Scaler needs a non-empty 2-D matrix, got shape {X.shape}"
            )
        return cls(mean=X.mean(axis=0), scale=np.maximum(X.std(axis=0), SCALE_FLOOR))

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.mean.shape[0]:
            raise DatasetError(
                f"Scaler fitted on {self.mean.shape[0]} features, got shape {X.shape}"
            )
        return (X - self.mean) / self.scale

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * self.scale + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Scaler":
        return cls(
            mean=np.asarray(data["mean"], dtype=np.float64),
            scale=np.asarray(data["scale"], dtype=np.float64),
        )


@dataclass(frozen=True)
class CsvSchema:
    """Column roles of an input CSV. Feature columns default to every other column."""

    class_column: str = "class"
    feature_columns: tuple[str, ...] | None = None
    timestamp_column: str | None = None


def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = np.flatnonzero(values.isna().to_numpy())
    if bad.size:
        row = int(bad[0])
        raise DatasetError(
            f"Malformed row {row}: non-numeric value {frame[column].iloc[row]!r} "
            f"in column '{column}'"
        )
    return values.to_numpy(dtype=np.float64)


def _timestamp_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce")
    if not values.isna().any():
        return values.to_numpy(dtype=np.float64)
    parsed = pd.to_datetime(frame[column], errors="coerce")
    bad = np.flatnonzero(parsed.isna().to_numpy())
    if bad.size:
        row = int(bad[0])
        raise DatasetError(
            f"Malformed row {row}: unparseable timestamp {frame[column].iloc[row]!r}"
        )
    return parsed.astype("int64").to_numpy(dtype=np.float64)


def load_csv(path: str | Path, schema: CsvSchema = CsvSchema()) -> Dataset:
    """
    Load a headered CSV file into a Dataset.

    The class column is kept as `anomaly_types` and every label is UNLABELED
    until `to_anomaly_labels` converts the classes.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"Dataset file not found: {path}")
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skipinitialspace=True
        )
    except pd.errors.ParserError as exc:
        raise DatasetError(f"{path}: inconsistent column count ({exc})") from exc
    except pd.errors.EmptyDataError as exc:
        raise DatasetError(f"{path}: no header row") from exc

    short_rows = np.flatnonzero(frame.isna().any(axis=1).to_numpy())
    if short_rows.size:
        raise DatasetError(
            f"{path}: inconsistent column count at row {int(short_rows[0])}"
        )
    if len(frame) == 0:
        raise DatasetError(f"{path}: no data rows")

    columns = list(frame.columns)
    if schema.class_column not in columns:
        raise DatasetError(f"{path}: class column '{schema.class_column}' not found")
    if schema.timestamp_column is not None and schema.timestamp_column not in columns:
        raise DatasetError(
            f"{path}: timestamp column '{schema.timestamp_column}' not found"
        )
    if schema.feature_columns is None:
        reserved = {schema.class_column, schema.timestamp_column}
        feature_columns = [c for c in columns if c not in reserved]
    else:
        feature_columns = list(schema.feature_columns)
        missing = [c for c in feature_columns if c not in columns]
        if missing:
            raise DatasetError(f"{path}: feature columns not found: {missing}")
    if not feature_columns:
        raise DatasetError(f"{path}: no feature columns")

    features = np.column_stack([_numeric_column(frame, c) for c in feature_columns])
    classes = _numeric_column(frame, schema.class_column)
    non_integer = np.flatnonzero(classes != np.round(classes))
    if non_integer.size:
        raise DatasetError(
            f"Malformed row {int(non_integer[0])}: class value is not an integer"
        )
    timestamps = None
    if schema.timestamp_column is not None:
        timestamps = _timestamp_column(frame, schema.timestamp_column)

    ds = Dataset(
        features=features,
        labels=np.full(len(frame), int(Label.UNLABELED), dtype=np.int64),
        anomaly_types=classes.astype(np.int64),
        timestamps=timestamps,
        name=path.stem,
        feature_names=tuple(feature_columns),
    )
    logger.info(f"Loaded {len(ds)} rows with {ds.dim} features from {path}")
    return ds


def to_anomaly_labels(ds: Dataset, normal_classes: Iterable[int]) -> Dataset:
    """Map the classes in `normal_classes` to NORMAL and every other class to an
    anomaly type of the same id."""
    normal = {int(c) for c in normal_classes}
    if ds.anomaly_types is None:
        raise DatasetError(f"Dataset '{ds.name}' carries no class column")
    classes = ds.anomaly_types
    present = {int(c) for c in np.unique(classes)}
    if not normal:
        raise DatasetError("normal_classes must not be empty")
    if not normal <= present:
        raise DatasetError(
            f"normal classes {sorted(normal - present)} do not appear in '{ds.name}'"
        )
    if normal >= present:
        raise DatasetError("normal_classes cover every class; no anomalies remain")
    if 0 in present - normal:
        raise DatasetError("class 0 is reserved for normals and cannot be anomalous")

    is_normal = np.isin(classes, sorted(normal))
    labels = np.where(is_normal, int(Label.NORMAL), int(Label.ANOMALOUS))
    types = np.where(is_normal, 0, classes)
    converted = replace(ds, labels=labels, anomaly_types=types)
    logger.info(
        f"'{ds.name}': {int((~is_normal).sum())} anomalies "
        f"({100.0 * (~is_normal).mean():.2f}%) across types {sorted(present - normal)}"
    )
    return converted


def split_train_test(
    ds: Dataset, test_frac: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Stratified random split; both parts keep the source row order."""
    if not 0.0 < test_frac < 1.0:
        raise DatasetError(f"test_frac must lie in (0, 1), got {test_frac}")
    if np.any(ds.labels == Label.UNLABELED):
        raise DatasetError(
            "split_train_test needs binary labels; call to_anomaly_labels"
        )
    indices = np.arange(len(ds))
    try:
        train_idx, test_idx = train_test_split(
            indices, test_size=test_frac, stratify=ds.labels, random_state=seed
        )
    except ValueError as exc:
        raise DatasetError(f"Too few anomalies to stratify '{ds.name}': {exc}") from exc
    return (
        ds.subset(np.sort(train_idx), f"{ds.name}-train"),
        ds.subset(np.sort(test_idx), f"{ds.name}-test"),
    )


def make_mismatch_benchmark(
    seed: int = 0,
    n_normal: int = 8000,
    n_per_type: int = 120,
    noise_dims: int = 0,
    n_views: int = 6,
    view_noise: float = 0.0,
    separation: float = 4.0,
    radius: tuple[float, float] = (8.0, 14.0),
    spread: float = 0.35,
) -> Dataset:
    """
    Two unit-variance normal clusters at (-separation, 0) and (separation, 0).
    Anomaly type 1 scatters above the first cluster and type 2 below the
    second, at a distance drawn uniformly from `radius` and an angle within
    `spread` radians of the vertical.

    Columns: the two signal coordinates, then `n_views` random linear views of
    the standardized signal (plus `view_noise` Gaussian noise), then
    `noise_dims` standard-normal columns. Timestamps follow the row order.
    """
    low, high = radius
    if not 0.0 < low <= high:
        raise DatasetError(f"radius must satisfy 0 < low <= high, got {radius}")
    if n_views < 0 or noise_dims < 0 or view_noise < 0.0:
        raise DatasetError("n_views, noise_dims and view_noise must be >= 0")
    rng = np.random.default_rng(seed)
    half = n_normal // 2
    normals = np.vstack(
        [
            rng.normal(loc=(-separation, 0.0), scale=1.0, size=(half, 2)),
            rng.normal(loc=(separation, 0.0), scale=1.0, size=(n_normal - half, 2)),
        ]
    )

    def scatter(center: float, sign: float) -> np.ndarray:
        distance = rng.uniform(low, high, size=n_per_type)
        angle = rng.uniform(-spread, spread, size=n_per_type)
        return np.column_stack(
            [center + distance * np.sin(angle), sign * distance * np.cos(angle)]
        )

    signal = np.vstack([normals, scatter(-separation, 1.0), scatter(separation, -1.0)])
    types = np.concatenate(
        [np.zeros(n_normal), np.ones(n_per_type), np.full(n_per_type, 2)]
    ).astype(np.int64)
    n = signal.shape[0]

    directions = rng.normal(size=(2, n_views))
    directions /= np.linalg.norm(directions, axis=0)
    standardized = signal / np.array([np.hypot(separation, 1.0), 1.0])
    views = standardized @ directions + view_noise * rng.normal(size=(n, n_views))
    noise = rng.normal(size=(n, noise_dims))
    features = np.hstack([signal, views, noise])

    order = rng.permutation(n)
    return Dataset(
        features=features[order],
        labels=(types[order] > 0).astype(np.int64),
        anomaly_types=types[order],
        timestamps=np.arange(n, dtype=np.float64),
        name="mismatch-benchmark",
    )
