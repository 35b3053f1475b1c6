"""
Dense neural-network core in numpy.

Layers compute `activation(X @ W + b)` with W shaped (in_dim, out_dim).
`forward` returns a cache that `backward` consumes; a cache is tied to the
parameter generation it was produced with and is rejected once the model has
been updated.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import LossError, OracleError, ShapeError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "sigmoid", "identity")
PROB_CLAMP = 1e-7


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return expit(z)
    return z


def _activation_grad(out: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (out > 0.0).astype(np.float64)
    if activation == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(out)


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


class MLP:
    """Stack of dense layers. Parameters are replaced, never mutated in place."""

    def __init__(self, layers: Sequence[DenseLayer]):
        if not layers:
            raise ShapeError("An MLP needs at least one layer")
        for i, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ShapeError(f"Layer {i}: unknown activation '{layer.activation}'")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.out_dim,):
                raise ShapeError(f"Layer {i}: weight/bias shapes do not agree")
            if i and layers[i - 1].out_dim != layer.in_dim:
                raise ShapeError(
                    f"Layer {i} expects {layer.in_dim} inputs but layer {i - 1} "
                    f"produces {layers[i - 1].out_dim}"
                )
        self.layers = list(layers)
        self.generation = 0
        self._check_finite()

    @classmethod
    def initialize(
        cls,
        dims: Sequence[int],
        activations: Sequence[str],
        rng: np.random.Generator,
    ) -> "MLP":
        """Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        if len(dims) != len(activations) + 1:
            raise ShapeError("dims must have one more entry than activations")
        layers = []
        for fan_in, fan_out, activation in zip(dims[:-1], dims[1:], activations):
            bound = 1.0 / math.sqrt(fan_in)
            layers.append(
                DenseLayer(
                    weight=rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                    bias=rng.uniform(-bound, bound, size=fan_out),
                    activation=activation,
                )
            )
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        if len(params) != 2 * len(self.layers):
            raise ShapeError(
                f"Expected {2 * len(self.layers)} parameter arrays, got {len(params)}"
            )
        for i, layer in enumerate(self.layers):
            weight, bias = params[2 * i], params[2 * i + 1]
            if weight.shape != layer.weight.shape or bias.shape != layer.bias.shape:
                raise ShapeError(f"Layer {i}: parameter shape changed")
            layer.weight = np.array(weight, dtype=np.float64)
            layer.bias = np.array(bias, dtype=np.float64)
        self._check_finite()
        self.generation += 1

    def _check_finite(self) -> None:
        for i, layer in enumerate(self.layers):
            if not (np.isfinite(layer.weight).all() and np.isfinite(layer.bias).all()):
                raise ShapeError(f"Layer {i} has non-finite parameters")

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "in_dim": layer.in_dim,
                    "out_dim": layer.out_dim,
                    "activation": layer.activation,
                    "weight": layer.weight.tolist(),
                    "bias": layer.bias.tolist(),
                }
                for layer in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MLP":
        return cls(
            [
                DenseLayer(
                    weight=np.asarray(entry["weight"], dtype=np.float64).reshape(
                        entry["in_dim"], entry["out_dim"]
                    ),
                    bias=np.asarray(entry["bias"], dtype=np.float64),
                    activation=entry["activation"],
                )
                for entry in data["layers"]
            ]
        )


@dataclass(frozen=True)
class ForwardCache:
    inputs: list[np.ndarray]
    outputs: list[np.ndarray]
    model_id: int
    generation: int


@dataclass(frozen=True)
class Gradients:
    params: list[np.ndarray]
    inputs: np.ndarray


def forward(mlp: MLP, X: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != mlp.in_dim:
        raise ShapeError(f"MLP expects {mlp.in_dim} input columns, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ShapeError("MLP input contains non-finite values")
    inputs, outputs = [], []
    h = X
    for layer in mlp.layers:
        inputs.append(h)
        h = _activate(h @ layer.weight + layer.bias, layer.activation)
        outputs.append(h)
    return h, ForwardCache(inputs, outputs, id(mlp), mlp.generation)


def backward(mlp: MLP, upstream: np.ndarray, cache: ForwardCache) -> Gradients:
    """Gradients of a scalar loss given dLoss/dOutput for the cached batch."""
    if cache.model_id != id(mlp) or cache.generation != mlp.generation:
        raise ShapeError("Stale forward cache: the model changed since forward()")
    grad = np.asarray(upstream, dtype=np.float64)
    if grad.shape != cache.outputs[-1].shape:
        raise ShapeError(
            f"Upstream gradient shape {grad.shape} != output shape "
            f"{cache.outputs[-1].shape}"
        )
    params: list[np.ndarray] = [np.empty(0)] * (2 * len(mlp.layers))
    for i in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[i]
        dz = grad * _activation_grad(cache.outputs[i], layer.activation)
        params[2 * i] = cache.inputs[i].T @ dz
        params[2 * i + 1] = dz.sum(axis=0)
        grad = dz @ layer.weight.T
    return Gradients(params=params, inputs=grad)


def bce_loss(
    probabilities: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """
    Binary cross entropy averaged over samples with weight 1.

    Returns the loss and its gradient with respect to `probabilities`.
    Zero-weight samples contribute nothing to either.
    """
    p = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if weights is None:
        w = np.ones_like(p)
    else:
        w = np.asarray(weights, np.float64).reshape(-1)
    if not (p.shape == y.shape == w.shape):
        raise ShapeError("probabilities, targets and weights must have equal length")
    if not np.isin(y, (0.0, 1.0)).all():
        raise LossError("BCE targets must be 0 or 1")
    if not np.isin(w, (0.0, 1.0)).all():
        raise LossError("BCE weights must be 0 or 1")
    n_kept = w.sum()
    if n_kept == 0:
        return 0.0, np.zeros_like(p)
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    per_sample = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    loss = float((w * per_sample).sum() / n_kept)
    grad = w * ((1.0 - y) / (1.0 - pc) - y / pc) / n_kept
    return loss, grad


def mse_loss(x_hat: np.ndarray, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over every entry and its gradient w.r.t. `x_hat`."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x_hat.shape != x.shape:
        raise ShapeError(f"MSE shapes differ: {x_hat.shape} vs {x.shape}")
    if x.size == 0:
        return 0.0, np.zeros_like(x_hat)
    diff = x_hat - x
    return float(np.mean(diff**2)), 2.0 * diff / x.size


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 1e-3) -> "OptimState":
        return cls(
            lr=lr,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: OptimState,
) -> tuple[list[np.ndarray], OptimState]:
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("params, grads and optimizer moments differ in length")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeError(
                f"Gradient shape {g.shape} does not match parameter {p.shape}"
            )
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**step)
        v_hat = v / (1.0 - b2**step)
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, OptimState(
        lr=state.lr, beta1=b1, beta2=b2, eps=state.eps, step=step, m=new_m, v=new_v
    )


@dataclass(frozen=True)
class LogisticConfig:
    max_iter: int = 500
    learning_rate: float = 0.1
    l2: float = 1e-4
    tol: float = 1e-6


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    bias: float
    n_iter: int
    grad_norm: float
    loss: float


def predict_proba(model: LogisticModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.weights.shape[0]:
        raise ShapeError(
            f"Logistic model expects {model.weights.shape[0]} columns, got {X.shape}"
        )
    return expit(X @ model.weights + model.bias)


def fit_logistic(
    X: np.ndarray, y: np.ndarray, config: LogisticConfig = LogisticConfig()
) -> LogisticModel:
    """Full-batch gradient descent on the L2-regularized logistic loss."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ShapeError(f"X {X.shape} and y {y.shape} disagree")
    if not np.isin(y, (0.0, 1.0)).all() or np.unique(y).size < 2:
        raise OracleError("Logistic regression needs both classes 0 and 1")

    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    grad_norm = math.inf
    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        residual = expit(X @ w + b) - y
        grad_w = X.T @ residual / n + config.l2 * w
        grad_b = float(residual.mean())
        grad_norm = math.sqrt(float(grad_w @ grad_w) + grad_b**2)
        if not math.isfinite(grad_norm):
            break
        if grad_norm < config.tol:
            break
        w = w - config.learning_rate * grad_w
        b = b - config.learning_rate * grad_b

    p = np.clip(expit(X @ w + b), PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
    loss += 0.5 * config.l2 * float(w @ w)
    if not (math.isfinite(loss) and math.isfinite(grad_norm) and np.isfinite(w).all()):
        raise OracleError(
            f"Logistic regression diverged after {iteration} iterations "
            f"(loss={loss}, gradient norm={grad_norm})"
        )
    logger.debug(
        f"Logistic oracle: {iteration} iterations, loss {loss:.6f}, "
        f"gradient norm {grad_norm:.2e}"
    )
    return LogisticModel(
        weights=w, bias=b, n_iter=iteration, grad_norm=grad_norm, loss=loss
    )
