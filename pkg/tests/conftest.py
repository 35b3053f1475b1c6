import numpy as np
import pytest

from spade_anomaly.config import TrainConfig
from spade_anomaly.dataset import Dataset, make_mismatch_benchmark, split_train_test
from spade_anomaly.scenarios import scenario_new_anomalies


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def benchmark():
    return make_mismatch_benchmark(
        seed=0, n_normal=400, n_per_type=40, n_views=2, noise_dims=2
    )


@pytest.fixture
def benchmark_split(benchmark):
    train, test = split_train_test(benchmark, test_frac=0.5, seed=0)
    return scenario_new_anomalies(train, [1], label_frac=0.3, seed=0, test=test)


@pytest.fixture
def linear_dataset():
    """Normals around the origin, anomalies shifted by 5 in every feature."""
    rng = np.random.default_rng(7)
    normals = rng.normal(size=(200, 2))
    anomalies = rng.normal(loc=5.0, size=(40, 2))
    types = np.concatenate([np.zeros(200), np.ones(20), np.full(20, 2)])
    return Dataset(
        features=np.vstack([normals, anomalies]),
        labels=(types > 0).astype(int),
        anomaly_types=types,
        timestamps=np.arange(240, dtype=float),
        name="linear",
    )


@pytest.fixture
def fast_config():
    return TrainConfig(max_epochs=4, batch_size=64, k=3, max_candidates=64, seed=0)
