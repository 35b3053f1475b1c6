"""
Experiment configuration.

Config files are JSON. Keys may be nested objects or flat dotted paths such as
`"train.alpha": 0.5`; both forms are merged before validation.
"""

import json
import logging
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError
from .pseudo_labeler import PseudoLabelerOptions

logger = logging.getLogger(__name__)

Method = Literal["spade", "supervised", "negative_supervised", "occ", "negative_occ"]
ScenarioKind = Literal["new_anomalies", "easiness", "pu", "high_risk", "temporal"]

METHODS: tuple[str, ...] = (
    "spade",
    "supervised",
    "negative_supervised",
    "occ",
    "negative_occ",
)

# methods that cannot run on a scenario because a labeled class is missing
INCOMPATIBLE: dict[str, frozenset[str]] = {
    "pu": frozenset({"occ", "supervised"}),
    "high_risk": frozenset({"occ"}),
}

DEFAULT_LABEL_FRAC = {"new_anomalies": 0.05, "pu": 0.5, "temporal": 0.05}


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: float = Field(1.0, ge=0.0, description="weight of the pseudo-label loss")
    beta: float = Field(1.0, ge=0.0, description="weight of the reconstruction loss")
    k: int = Field(5, ge=1, description="number of OCCs in the pseudo-labeler")
    patience: int = Field(5, ge=1)
    max_epochs: int = Field(200, ge=1)
    min_improvement: float = Field(1e-6, ge=0.0)
    batch_size: int = Field(256, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    seed: int = 0
    warmup_raw_features: bool = False
    min_hidden: int = Field(
        1, ge=1, description="lower bound on the ceil(d / 2) representation width"
    )

    partial_matching: bool = True
    normals_in_occ: bool = True
    vote: Literal["unanimous", "majority"] = "unanimous"
    occ_eps: float = Field(1e-6, gt=0.0)
    diagonal_covariance: bool = False
    max_candidates: int | None = Field(
        None, ge=2, description="cap on matching thresholds; None tries every one"
    )
    otsu_bins: int = Field(256, ge=2)

    def pseudo_labeler_options(self) -> PseudoLabelerOptions:
        return PseudoLabelerOptions(
            partial_matching=self.partial_matching,
            normals_in_occ=self.normals_in_occ,
            vote=self.vote,
            eps=self.occ_eps,
            diagonal=self.diagonal_covariance,
            otsu_bins=self.otsu_bins,
            max_candidates=self.max_candidates,
        )


class DatasetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    source: Literal["csv", "synthetic"] = "synthetic"
    path: Path | None = None
    test_path: Path | None = None
    class_column: str = "class"
    feature_columns: list[str] | None = None
    timestamp_column: str | None = None
    normal_classes: list[int] = Field(default_factory=list)
    test_frac: float = Field(0.5, gt=0.0, lt=1.0)

    n_normal: int = Field(8000, ge=10)
    n_per_type: int = Field(120, ge=2)
    n_views: int = Field(6, ge=0, description="random linear views of the signal")
    view_noise: float = Field(0.0, ge=0.0)
    noise_dims: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_source(self) -> "DatasetConfig":
        if self.source == "csv":
            if self.path is None:
                raise ValueError("dataset.path is required for CSV datasets")
            if not self.normal_classes:
                raise ValueError("dataset.normal_classes is required for CSV datasets")
        return self


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: ScenarioKind = "new_anomalies"
    given_types: list[int] = Field(default_factory=list)
    label_frac: float | None = Field(None, gt=0.0, le=1.0)
    top_frac: float = Field(0.1, gt=0.0, le=1.0)
    risk_frac: float = Field(0.02, gt=0.0, le=1.0)
    label_frac_of_risky: float = Field(0.5, gt=0.0, le=1.0)

    def resolved_label_frac(self) -> float:
        if self.label_frac is not None:
            return self.label_frac
        return DEFAULT_LABEL_FRAC.get(self.kind, 0.05)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    method: Method = "spade"
    train: TrainConfig = Field(default_factory=TrainConfig)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    output_dir: Path = Path("runs")

    @model_validator(mode="after")
    def _check_compatibility(self) -> "ExperimentConfig":
        excluded = INCOMPATIBLE.get(self.scenario.kind, frozenset())
        if self.method in excluded:
            raise ValueError(
                f"method '{self.method}' cannot run on the '{self.scenario.kind}' "
                "scenario: it has no labeled normal samples to train on"
            )
        kind = self.scenario.kind
        if kind in ("new_anomalies", "pu") and not self.scenario.given_types:
            raise ValueError(f"scenario '{kind}' needs scenario.given_types")
        if self.scenario.kind == "temporal" and self.dataset.source == "csv":
            if self.dataset.timestamp_column is None:
                raise ValueError("temporal scenario needs dataset.timestamp_column")
        return self


class RuntimeSettings(BaseSettings):
    """Process-level settings read from SPADE_* environment variables."""

    model_config = SettingsConfigDict(env_prefix="SPADE_")

    threads: int = Field(1, ge=1, description="maximum concurrent runs")


def unflatten(data: dict[str, Any]) -> dict[str, Any]:
    """Expand dotted keys into nested dicts."""
    nested: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict):
            value = unflatten(value)
        target = nested
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"Config key '{key}' conflicts with a scalar value")
        leaf = parts[-1]
        if isinstance(value, dict) and isinstance(target.get(leaf), dict):
            target[leaf] = merge(target[leaf], value)
        else:
            target[leaf] = value
    return nested


def merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_config(
    data: dict[str, Any] | None = None, overrides: dict[str, Any] | None = None
) -> ExperimentConfig:
    raw = merge(unflatten(data or {}), unflatten(overrides or {}))
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"Invalid experiment config:\n{exc}") from exc


def load_config(
    path: str | Path | None = None, overrides: dict[str, Any] | None = None
) -> ExperimentConfig:
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    config = build_config(data, overrides)
    logger.debug(f"Resolved config: {config.model_dump(mode='json')}")
    return config
