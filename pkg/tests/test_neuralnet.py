import numpy as np
import pytest

from spade_anomaly.errors import LossError, OracleError, ShapeError, SpadeError
from spade_anomaly.neuralnet import (
    MLP,
    LogisticConfig,
    OptimState,
    adam_step,
    backward,
    bce_loss,
    fit_logistic,
    forward,
    mse_loss,
    predict_proba,
)


def _random_net(rng):
    depth = int(rng.integers(1, 4))
    dims = [int(d) for d in rng.integers(1, 5, size=depth + 1)]
    activations = [str(a) for a in rng.choice(["sigmoid", "identity", "relu"], depth)]
    return MLP.initialize(dims, activations, rng)


def _away_from_relu_kinks(mlp, X, margin=1e-3):
    h = X
    for layer in mlp.layers:
        z = h @ layer.weight + layer.bias
        if layer.activation == "relu" and np.any(np.abs(z) < margin):
            return False
        h = np.maximum(z, 0) if layer.activation == "relu" else (
            1 / (1 + np.exp(-z)) if layer.activation == "sigmoid" else z
        )
    return True


def test_backward_matches_central_differences(rng):
    checked = 0
    while checked < 20:
        mlp = _random_net(rng)
        X = rng.normal(size=(5, mlp.in_dim))
        if not _away_from_relu_kinks(mlp, X):
            continue
        projection = rng.normal(size=(5, mlp.out_dim))
        out, cache = forward(mlp, X)
        grads = backward(mlp, projection, cache)

        def loss(params, inputs=X):
            shifted = MLP.from_dict(mlp.to_dict())
            shifted.set_parameters(params)
            return float(np.sum(forward(shifted, inputs)[0] * projection))

        params = [p.copy() for p in mlp.parameters()]
        h = 1e-6
        for p_index, param in enumerate(params):
            numeric = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                plus = [p.copy() for p in params]
                minus = [p.copy() for p in params]
                plus[p_index][idx] += h
                minus[p_index][idx] -= h
                numeric[idx] = (loss(plus) - loss(minus)) / (2 * h)
            np.testing.assert_allclose(
                grads.params[p_index], numeric, rtol=1e-4, atol=1e-7
            )

        numeric_inputs = np.zeros_like(X)
        for idx in np.ndindex(X.shape):
            plus, minus = X.copy(), X.copy()
            plus[idx] += h
            minus[idx] -= h
            numeric_inputs[idx] = (loss(params, plus) - loss(params, minus)) / (2 * h)
        np.testing.assert_allclose(grads.inputs, numeric_inputs, rtol=1e-4, atol=1e-7)
        checked += 1


def test_stale_cache_is_rejected(rng):
    mlp = MLP.initialize([3, 2, 1], ["relu", "sigmoid"], rng)
    out, cache = forward(mlp, rng.normal(size=(4, 3)))
    mlp.set_parameters(mlp.parameters())
    with pytest.raises(ShapeError, match="Stale"):
        backward(mlp, np.ones_like(out), cache)


def test_forward_rejects_wrong_width(rng):
    mlp = MLP.initialize([3, 1], ["sigmoid"], rng)
    with pytest.raises(ShapeError):
        forward(mlp, np.zeros((2, 4)))


def test_initialization_bounds(rng):
    mlp = MLP.initialize([16, 4], ["identity"], rng)
    assert np.abs(mlp.layers[0].weight).max() <= 0.25


def test_serialization_round_trip(rng):
    mlp = MLP.initialize([3, 4, 2], ["relu", "identity"], rng)
    X = rng.normal(size=(6, 3))
    restored = MLP.from_dict(mlp.to_dict())
    np.testing.assert_array_equal(forward(restored, X)[0], forward(mlp, X)[0])


def test_bce_loss_values_and_weights():
    loss, grad = bce_loss(np.array([0.5]), np.array([1]))
    assert loss == pytest.approx(np.log(2))
    assert grad[0] == pytest.approx(-2.0)

    loss, grad = bce_loss(np.array([0.2, 0.9]), np.array([0, 1]), np.zeros(2))
    assert loss == 0.0
    np.testing.assert_array_equal(grad, 0.0)

    a, _ = bce_loss(np.array([0.3, 0.1]), np.array([1, 0]), np.array([1, 0]))
    b, _ = bce_loss(np.array([0.3, 0.99]), np.array([1, 0]), np.array([1, 0]))
    assert a == b

    with pytest.raises(LossError):
        bce_loss(np.array([0.5]), np.array([2]))
    with pytest.raises(SpadeError):
        bce_loss(np.array([0.5]), np.array([1]), np.array([0.5]))
    with pytest.raises(ValueError):
        bce_loss(np.array([0.5]), np.array([-1]))


def test_bce_gradient_matches_finite_difference(rng):
    p = rng.uniform(0.05, 0.95, size=8)
    y = rng.integers(0, 2, size=8)
    w = rng.integers(0, 2, size=8)
    w[0] = 1
    _, grad = bce_loss(p, y, w)
    h = 1e-7
    for i in range(8):
        up, down = p.copy(), p.copy()
        up[i] += h
        down[i] -= h
        numeric = (bce_loss(up, y, w)[0] - bce_loss(down, y, w)[0]) / (2 * h)
        assert grad[i] == pytest.approx(numeric, rel=1e-5, abs=1e-7)


def test_mse_loss(rng):
    x = rng.normal(size=(4, 3))
    x_hat = x + 0.5
    loss, grad = mse_loss(x_hat, x)
    assert loss == pytest.approx(0.25)
    np.testing.assert_allclose(grad, np.full((4, 3), 1.0 / 12))
    with pytest.raises(ShapeError):
        mse_loss(x_hat, x[:, :2])


def test_adam_first_step_moves_by_learning_rate():
    params = [np.array([1.0, -1.0])]
    state = OptimState.for_params(params, lr=0.1)
    new, state = adam_step(params, [np.array([3.0, -0.5])], state)
    np.testing.assert_allclose(new[0], [0.9, -0.9], atol=1e-6)
    assert state.step == 1
    np.testing.assert_array_equal(params[0], [1.0, -1.0])


def test_adam_zero_gradient_keeps_parameters(rng):
    params = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    state = OptimState.for_params(params, lr=0.5)
    new, state = adam_step(params, [np.zeros((3, 2)), np.zeros(2)], state)
    for before, after in zip(params, new):
        np.testing.assert_array_equal(after, before)
    assert state.step == 1


def test_adam_two_steps_by_hand():
    params = [np.array([1.0])]
    state = OptimState.for_params(params, lr=0.01)
    params, state = adam_step(params, [np.array([0.5])], state)
    params, state = adam_step(params, [np.array([-0.2])], state)

    # m1 = 0.05, v1 = 0.00025; m2 = 0.025, v2 = 0.00028975
    first = 0.01 * (0.05 / 0.1) / (np.sqrt(0.00025 / 0.001) + 1e-8)
    second = 0.01 * (0.025 / 0.19) / (np.sqrt(0.00028975 / 0.001999) + 1e-8)
    assert params[0][0] == pytest.approx(1.0 - first - second, rel=1e-12)
    np.testing.assert_allclose(state.m[0], [0.025])
    np.testing.assert_allclose(state.v[0], [0.00028975])


def test_adam_minimizes_quadratic():
    params = [np.array([5.0, -3.0])]
    state = OptimState.for_params(params, lr=0.1)
    for _ in range(1000):
        params, state = adam_step(params, [2 * params[0]], state)
    np.testing.assert_allclose(params[0], 0.0, atol=5e-2)


def test_fit_logistic_separable(rng):
    X = np.vstack([rng.normal(-2, 1, size=(100, 2)), rng.normal(2, 1, size=(100, 2))])
    y = np.concatenate([np.zeros(100), np.ones(100)])
    model = fit_logistic(X, y)
    accuracy = np.mean((predict_proba(model, X) >= 0.5) == y)
    assert accuracy > 0.95


def test_fit_logistic_needs_two_classes(rng):
    with pytest.raises(OracleError):
        fit_logistic(rng.normal(size=(10, 2)), np.zeros(10))


def test_fit_logistic_uninformative_features_give_the_prior(rng):
    X = rng.normal(size=(20_000, 3))
    y = (rng.uniform(size=20_000) < 0.3).astype(float)
    model = fit_logistic(X, y, LogisticConfig(max_iter=3000))
    p = predict_proba(model, X)
    assert p.mean() == pytest.approx(y.mean(), abs=1e-3)
    np.testing.assert_allclose(p, y.mean(), atol=0.05)


def test_fit_logistic_flipped_labels_negate_weights(rng):
    X = np.vstack([rng.normal(-1, 1, size=(80, 2)), rng.normal(1, 1, size=(80, 2))])
    y = np.concatenate([np.zeros(80), np.ones(80)])
    model = fit_logistic(X, y)
    flipped = fit_logistic(X, 1.0 - y)
    np.testing.assert_allclose(flipped.weights, -model.weights, atol=1e-6)
    assert flipped.bias == pytest.approx(-model.bias, abs=1e-6)
