"""
Minimal feed-forward network with per-example gradients.

Shared by the DP-SGD target mechanism and the Gaussian-likelihood regressor.
Weights are stored as (fan_in, fan_out) matrices so a batch runs as X @ W + b.
"""

from dataclasses import dataclass, field
from typing import List, Literal, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import ConfigurationError, DomainError, InputError
from .schemas import NetConfig


LossName = Literal["cross_entropy", "gaussian_nll"]

LOSS_FOR_HEAD = {
    "logits": "cross_entropy",
    "gaussian": "gaussian_nll",
}


@dataclass
class NetParams:
    """Per-layer weights and biases (float64) plus the architecture they follow."""

    config: NetConfig
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def copy(self) -> "NetParams":
        return NetParams(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def arrays(self) -> List[np.ndarray]:
        """Weights and biases interleaved layer by layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def to_bytes(self) -> bytes:
        return self.flat().astype(np.float64).tobytes()

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class PerExampleGrads:
    """One NetParams-shaped gradient per example, stacked on axis 0."""

    weights: List[np.ndarray]  # each (B, fan_in, fan_out)
    biases: List[np.ndarray]   # each (B, fan_out)
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    norms: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.norms.size == 0 and self.weights:
            self.norms = _per_example_norms(self.weights, self.biases)

    @property
    def batch_size(self) -> int:
        return self.biases[0].shape[0]

    def example(self, i: int, config: NetConfig) -> NetParams:
        """Gradient of example i as a NetParams value."""
        return NetParams(
            config=config,
            weights=[w[i].copy() for w in self.weights],
            biases=[b[i].copy() for b in self.biases],
        )

    def summed(self, config: NetConfig) -> NetParams:
        """Sum over the batch; summation order is the fixed axis-0 order."""
        return NetParams(
            config=config,
            weights=[w.sum(axis=0) for w in self.weights],
            biases=[b.sum(axis=0) for b in self.biases],
        )

    def mean(self, config: NetConfig) -> NetParams:
        total = self.summed(config)
        return scale_params(total, 1.0 / self.batch_size)


def _per_example_norms(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]) -> np.ndarray:
    sq = np.zeros(biases[0].shape[0])
    for w, b in zip(weights, biases):
        sq += np.einsum("bij,bij->b", w, w) + np.einsum("bj,bj->b", b, b)
    return np.sqrt(sq)


def init_params(config: NetConfig, rng: np.random.Generator) -> NetParams:
    """
    Glorot-uniform weights and zero biases.

    Args:
        config: Network architecture
        rng: Seeded generator; draws happen layer by layer

    Returns:
        Freshly initialized NetParams
    """
    dims = config.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetParams(config=config, weights=weights, biases=biases)


def zeros_like(params: NetParams) -> NetParams:
    return NetParams(
        config=params.config,
        weights=[np.zeros_like(w) for w in params.weights],
        biases=[np.zeros_like(b) for b in params.biases],
    )


def scale_params(params: NetParams, factor: float) -> NetParams:
    return NetParams(
        config=params.config,
        weights=[w * factor for w in params.weights],
        biases=[b * factor for b in params.biases],
    )


def add_params(a: NetParams, b: NetParams) -> NetParams:
    _check_congruent(a, b)
    return NetParams(
        config=a.config,
        weights=[x + y for x, y in zip(a.weights, b.weights)],
        biases=[x + y for x, y in zip(a.biases, b.biases)],
    )


def params_norm(params: NetParams) -> float:
    return float(np.sqrt(sum(np.sum(a * a) for a in params.arrays())))


def _check_congruent(a: NetParams, b: NetParams):
    if len(a.weights) != len(b.weights):
        raise ConfigurationError(f"layer count mismatch: {len(a.weights)} vs {len(b.weights)}")
    for i, (x, y) in enumerate(zip(a.arrays(), b.arrays())):
        if x.shape != y.shape:
            raise ConfigurationError(f"shape mismatch in array {i}: {x.shape} vs {y.shape}")


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


def _forward_cache(params: NetParams, X: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Pre-activations and activations of every layer; activations[0] is the input."""
    activation = params.config.activation
    acts = [X]
    pre = []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w + b
        pre.append(z)
        acts.append(z if i == last else _activate(z, activation))
    return pre, acts


def _as_batch(params: NetParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.config.input_dim:
        raise ConfigurationError(
            f"expected inputs with {params.config.input_dim} features, got shape {X.shape}"
        )
    return X


def forward_batch(params: NetParams, X: np.ndarray) -> np.ndarray:
    """Network outputs for a (B, input_dim) batch; shape (B, output_dim)."""
    X = _as_batch(params, X)
    if not np.all(np.isfinite(X)):
        raise InputError("inputs must be finite")
    _, acts = _forward_cache(params, X)
    return acts[-1]


def forward(params: NetParams, x: np.ndarray) -> np.ndarray:
    """
    Run one example through the network.

    Args:
        params: Network parameters
        x: Feature vector with input_dim entries

    Returns:
        Logits, or (mu, log sigma) for the gaussian head

    Raises:
        ConfigurationError: If x has the wrong number of features
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigurationError(f"forward expects a single feature vector, got shape {x.shape}")
    return forward_batch(params, x)[0]


def margin_score(logits: np.ndarray, label: int) -> float:
    """Logit of the true label minus the sum of the remaining logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise InputError(f"label {label} out of range for {logits.shape[-1]} logits")
    return float(2.0 * logits[label] - logits.sum())


def gaussian_nll(s: float, mu: float, sigma: float) -> float:
    """(s - mu)^2 / (2 sigma^2) + log sigma."""
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0, got {sigma}")
    return float((s - mu) ** 2 / (2.0 * sigma ** 2) + np.log(sigma))


def _loss_and_output_grad(
    out: np.ndarray,
    targets: np.ndarray,
    loss: str,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-example loss values and dLoss/dOutput, both batched."""
    if loss == "cross_entropy":
        labels = np.asarray(targets, dtype=np.int64)
        if np.any(labels < 0) or np.any(labels >= out.shape[1]):
            raise InputError(f"labels must lie in [0, {out.shape[1]})")
        rows = np.arange(out.shape[0])
        losses = logsumexp(out, axis=1) - out[rows, labels]
        grad = softmax(out, axis=1)
        grad[rows, labels] -= 1.0
        return losses, grad

    s = np.asarray(targets, dtype=np.float64)
    mu, log_sigma = out[:, 0], out[:, 1]
    inv_var = np.exp(-2.0 * log_sigma)
    resid = s - mu
    losses = 0.5 * resid ** 2 * inv_var + log_sigma
    grad = np.stack([-resid * inv_var, 1.0 - resid ** 2 * inv_var], axis=1)
    return losses, grad


def _check_batch(params: NetParams, X: np.ndarray, targets: np.ndarray, loss: LossName) -> Tuple[np.ndarray, np.ndarray]:
    expected = LOSS_FOR_HEAD[params.config.head]
    if loss != expected:
        raise ConfigurationError(f"loss '{loss}' is incompatible with head '{params.config.head}'")

    X = _as_batch(params, X)
    if X.shape[0] == 0:
        raise ConfigurationError("backward needs a nonempty batch")
    targets = np.asarray(targets)
    if targets.shape[0] != X.shape[0]:
        raise ConfigurationError(f"{targets.shape[0]} targets for {X.shape[0]} examples")
    return X, targets


def _layer_deltas(
    params: NetParams,
    X: np.ndarray,
    targets: np.ndarray,
    loss: LossName,
) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """Per-example losses, layer inputs and dLoss/dPreactivation of every layer."""
    pre, acts = _forward_cache(params, X)
    losses, delta = _loss_and_output_grad(acts[-1], targets, loss)

    n_layers = len(params.weights)
    deltas: List[np.ndarray] = [None] * n_layers
    for layer in range(n_layers - 1, -1, -1):
        deltas[layer] = delta
        if layer > 0:
            upstream = delta @ params.weights[layer].T
            delta = upstream * _activation_grad(pre[layer - 1], acts[layer], params.config.activation)
    return losses, acts[:-1], deltas


def backward(
    params: NetParams,
    X: np.ndarray,
    targets: np.ndarray,
    loss: LossName,
) -> PerExampleGrads:
    """
    Per-example gradients of the chosen loss with respect to every parameter.

    Args:
        params: Network parameters
        X: (B, input_dim) inputs, B >= 1
        targets: Class labels (cross_entropy) or real scores (gaussian_nll)
        loss: Loss name; must match the network head

    Returns:
        PerExampleGrads with per-example losses and L2 norms

    Raises:
        ConfigurationError: On a head/loss mismatch or bad shapes
    """
    X, targets = _check_batch(params, X, targets, loss)
    losses, inputs, deltas = _layer_deltas(params, X, targets, loss)
    return PerExampleGrads(
        weights=[np.einsum("bi,bj->bij", a, delta) for a, delta in zip(inputs, deltas)],
        biases=[delta.copy() for delta in deltas],
        losses=losses,
    )


def mean_gradient(
    params: NetParams,
    X: np.ndarray,
    targets: np.ndarray,
    loss: LossName,
) -> NetParams:
    """Batch-mean gradient, without materializing per-example gradients."""
    X, targets = _check_batch(params, X, targets, loss)
    _, inputs, deltas = _layer_deltas(params, X, targets, loss)
    n = X.shape[0]
    return NetParams(
        config=params.config,
        weights=[a.T @ delta / n for a, delta in zip(inputs, deltas)],
        biases=[delta.mean(axis=0) for delta in deltas],
    )


def clip_per_example(grads: PerExampleGrads, C: float) -> PerExampleGrads:
    """
    Rescale each example's gradient by min(1, C / ||g||).

    Zero-norm gradients pass through unchanged.
    """
    if not C > 0:
        raise ConfigurationError(f"clip norm must be > 0, got {C}")
    norms = grads.norms
    with np.errstate(divide="ignore"):
        factors = np.where(norms > C, C / np.where(norms > 0, norms, 1.0), 1.0)
    return PerExampleGrads(
        weights=[w * factors[:, None, None] for w in grads.weights],
        biases=[b * factors[:, None] for b in grads.biases],
        losses=grads.losses,
        norms=norms * factors,
    )


def sgd_step(params: NetParams, grads: NetParams, lr: float) -> NetParams:
    """params - lr * grads, elementwise. lr = 0 returns an unchanged copy."""
    if lr < 0:
        raise ConfigurationError(f"learning rate must be >= 0, got {lr}")
    _check_congruent(params, grads)
    return NetParams(
        config=params.config,
        weights=[w - lr * g for w, g in zip(params.weights, grads.weights)],
        biases=[b - lr * g for b, g in zip(params.biases, grads.biases)],
    )
