"""Semi-supervised anomaly detection with an ensemble-of-OCCs pseudo-labeler."""

from .config import ExperimentConfig, TrainConfig, load_config
from .dataset import Dataset, Label, load_csv, make_mismatch_benchmark
from .evaluation import EvalReport, aggregate_runs, auc, evaluate_splits
from .pseudo_labeler import PseudoLabeler, build
from .scenarios import ScenarioSplit
from .trainer import SpadeModel, predict_scores, train_spade, train_supervised

__all__ = [
    "Dataset",
    "EvalReport",
    "ExperimentConfig",
    "Label",
    "PseudoLabeler",
    "ScenarioSplit",
    "SpadeModel",
    "TrainConfig",
    "aggregate_runs",
    "auc",
    "build",
    "evaluate_splits",
    "load_config",
    "load_csv",
    "make_mismatch_benchmark",
    "predict_scores",
    "train_spade",
    "train_supervised",
]
