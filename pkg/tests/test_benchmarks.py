"""
End-to-end quality checks. Slow: run with `pytest -m slow`.

The Thyroid checks need the annthyroid train/test CSVs (class column `class`,
normal class 3) named by SPADE_THYROID_TRAIN and SPADE_THYROID_TEST.
"""

import os

import pytest

from spade_anomaly import experiment
from spade_anomaly.config import build_config

pytestmark = pytest.mark.slow

SYNTHETIC = {
    "dataset.source": "synthetic",
    "scenario.kind": "new_anomalies",
    "scenario.given_types": [1],
    "scenario.label_frac": 0.2,
    "train.max_epochs": 40,
    "seeds": [0, 1, 2, 3, 4],
}
THREADS = 5

THYROID_TRAIN = os.environ.get("SPADE_THYROID_TRAIN")
THYROID_TEST = os.environ.get("SPADE_THYROID_TEST")
needs_thyroid = pytest.mark.skipif(
    not (THYROID_TRAIN and THYROID_TEST),
    reason="SPADE_THYROID_TRAIN and SPADE_THYROID_TEST not set",
)


def _thyroid(**overrides):
    base = {
        "dataset": {
            "source": "csv",
            "path": THYROID_TRAIN,
            "test_path": THYROID_TEST,
            "normal_classes": [3],
        },
        "scenario.given_types": [1],
        "seeds": [0, 1, 2, 3, 4],
    }
    return build_config(base, overrides)


def _mean(report, metric="overall_auc"):
    return report.mean[metric]


def test_spade_beats_supervised_on_new_anomaly_types(tmp_path):
    cfg = build_config(SYNTHETIC)
    spade = experiment.run_experiment(cfg, tmp_path / "spade", THREADS)
    supervised = experiment.run_experiment(
        experiment.with_overrides(cfg, {"method": "supervised"}),
        tmp_path / "sup",
        THREADS,
    )
    assert _mean(spade) >= _mean(supervised) + 0.05
    assert _mean(spade, "missed_auc") >= 0.85


def test_pseudo_label_loss_helps_and_its_weight_matters_little(tmp_path):
    frame = experiment.sweep(
        build_config(SYNTHETIC), "alpha", [0.0, 0.5, 1.0, 2.0], tmp_path, THREADS
    )
    by_alpha = dict(zip(frame["value"], frame["overall_auc_mean"]))
    positive = [by_alpha[a] for a in (0.5, 1.0, 2.0)]
    assert all(auc >= by_alpha[0.0] + 0.03 for auc in positive)
    assert max(positive) - min(positive) <= 0.03


def test_full_model_is_best_ablation(tmp_path):
    variants = [
        "full",
        "no-ensemble",
        "no-self-supervision",
        "majority-vote",
        "no-partial-matching",
    ]
    frame = experiment.sweep(
        build_config(SYNTHETIC), "variant", variants, tmp_path, THREADS
    )
    scores = dict(zip(frame["value"], frame["overall_auc_mean"]))
    for variant in variants[1:]:
        assert scores["full"] >= scores[variant], variant


@needs_thyroid
def test_thyroid_new_anomaly_types(tmp_path):
    spade = experiment.run_experiment(_thyroid(), tmp_path / "spade", THREADS)
    supervised = experiment.run_experiment(
        _thyroid(method="supervised"), tmp_path / "sup", THREADS
    )
    assert _mean(spade) >= 0.85
    assert _mean(spade) > _mean(supervised)
    assert _mean(spade, "given_auc") >= 0.97


@needs_thyroid
def test_thyroid_positive_unlabeled(tmp_path):
    cfg = _thyroid(**{"scenario.kind": "pu"})
    report = experiment.run_experiment(cfg, tmp_path, THREADS)
    assert _mean(report) >= 0.80
