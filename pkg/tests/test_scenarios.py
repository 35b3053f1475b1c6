import math

import numpy as np
import pytest

from spade_anomaly.dataset import split_train_test
from spade_anomaly.errors import DatasetError
from spade_anomaly.scenarios import (
    LABELED_CSV,
    MANIFEST_JSON,
    partition_disjoint,
    partition_indices,
    read_manifest,
    read_scenario,
    scenario_easiness,
    scenario_high_risk,
    scenario_new_anomalies,
    scenario_pu,
    temporal_split,
    write_scenario,
)


def _check_partition(split, source):
    ids = np.concatenate([split.labeled.sample_ids, split.unlabeled.sample_ids])
    np.testing.assert_array_equal(np.sort(ids), np.sort(source.sample_ids))
    assert (split.unlabeled.labels == -1).all()
    assert split.unlabeled.anomaly_types is None
    assert split.unlabeled_truth.labels.size == len(split.unlabeled)


def test_new_anomalies_only_labels_given_types(linear_dataset):
    split = scenario_new_anomalies(linear_dataset, [1], label_frac=0.5, seed=0)
    _check_partition(split, linear_dataset)
    assert len(split.labeled) == 120
    assert split.labeled.anomaly_type_set() <= {1}
    assert split.labeled.anomalous_mask.any()
    assert split.given_types == frozenset({1})
    # every type-2 anomaly stays unlabeled
    assert np.sum(split.unlabeled_truth.anomaly_types == 2) == 20


def test_new_anomalies_is_deterministic(linear_dataset):
    a = scenario_new_anomalies(linear_dataset, [1], label_frac=0.3, seed=4)
    b = scenario_new_anomalies(linear_dataset, [1], label_frac=0.3, seed=4)
    np.testing.assert_array_equal(a.labeled.sample_ids, b.labeled.sample_ids)


def test_new_anomalies_rejects_absent_type(linear_dataset):
    with pytest.raises(DatasetError, match="not present"):
        scenario_new_anomalies(linear_dataset, [7], label_frac=0.3, seed=0)


def test_pu_labels_no_normals(linear_dataset):
    split = scenario_pu(linear_dataset, [1, 2], label_frac=0.5, seed=1)
    _check_partition(split, linear_dataset)
    assert len(split.labeled) == 20
    assert split.labeled.anomalous_mask.all()


def test_easiness_picks_both_classes(linear_dataset):
    split = scenario_easiness(linear_dataset, top_frac=0.1, seed=0)
    _check_partition(split, linear_dataset)
    n_normal = int(split.labeled.normal_mask.sum())
    n_anomalous = int(split.labeled.anomalous_mask.sum())
    assert 1 <= n_normal <= math.ceil(0.1 * 200)
    assert 1 <= n_anomalous <= math.ceil(0.1 * 40)
    # the most confident anomalies are the ones furthest along the diagonal
    labeled_anomalies = split.labeled.features[split.labeled.anomalous_mask]
    all_anomalies = linear_dataset.features[linear_dataset.anomalous_mask]
    assert labeled_anomalies.sum(axis=1).mean() > all_anomalies.sum(axis=1).mean()


def test_high_risk_label_count(linear_dataset):
    split = scenario_high_risk(linear_dataset, risk_frac=0.1, label_frac_of_risky=0.5)
    _check_partition(split, linear_dataset)
    assert len(split.labeled) == round(0.5 * math.ceil(0.1 * 240))
    assert split.labeled.anomalous_mask.mean() > 0.5


def test_temporal_split_orders_parts(linear_dataset):
    split = temporal_split(linear_dataset, test_frac=0.25, label_frac=0.2)
    assert len(split.test) == 60
    assert len(split.labeled) == round(0.2 * 180)
    assert split.labeled.timestamps.max() < split.unlabeled.timestamps.min()
    assert split.unlabeled.timestamps.max() < split.test.timestamps.min()


def test_temporal_split_equal_timestamps_uses_row_order(linear_dataset, caplog):
    from dataclasses import replace

    flat = replace(linear_dataset, timestamps=np.zeros(len(linear_dataset)))
    split = temporal_split(flat, test_frac=0.5, label_frac=0.1)
    np.testing.assert_array_equal(split.test.sample_ids, np.arange(120, 240))
    assert "timestamps are equal" in caplog.text


def test_partition_indices():
    parts = partition_indices(11, 3, seed=2)
    assert sorted(len(p) for p in parts) == [3, 4, 4]
    np.testing.assert_array_equal(np.sort(np.concatenate(parts)), np.arange(11))
    for part in parts:
        np.testing.assert_array_equal(part, np.sort(part))
    with pytest.raises(DatasetError):
        partition_indices(2, 3, seed=0)


def test_partition_disjoint(benchmark_split):
    parts = partition_disjoint(benchmark_split.unlabeled, 4, seed=0)
    ids = np.concatenate([p.sample_ids for p in parts])
    assert len(ids) == len(set(ids.tolist())) == len(benchmark_split.unlabeled)


def test_scenario_directory_round_trip(tmp_path, benchmark):
    train, test = split_train_test(benchmark, 0.5, seed=0)
    split = scenario_new_anomalies(train, [1], label_frac=0.3, seed=0, test=test)
    written = write_scenario(split, tmp_path / "a", config={"method": "spade"})
    assert {p.name for p in written} == {
        "labeled.csv",
        "unlabeled.csv",
        "test.csv",
        MANIFEST_JSON,
    }
    manifest = read_manifest(tmp_path / "a")
    assert manifest["given_types"] == [1]
    assert manifest["config"] == {"method": "spade"}
    assert manifest["fractions"] == {"label_frac": 0.3}

    loaded = read_scenario(tmp_path / "a")
    np.testing.assert_allclose(loaded.labeled.features, split.labeled.features)
    np.testing.assert_array_equal(loaded.unlabeled.labels, split.unlabeled.labels)
    np.testing.assert_array_equal(
        loaded.unlabeled_truth.labels, split.unlabeled_truth.labels
    )
    np.testing.assert_array_equal(loaded.test.anomaly_types, test.anomaly_types)

    write_scenario(split, tmp_path / "b", config={"method": "spade"})
    for name in (LABELED_CSV, MANIFEST_JSON):
        first = (tmp_path / "a" / name).read_bytes()
        assert first == (tmp_path / "b" / name).read_bytes()
