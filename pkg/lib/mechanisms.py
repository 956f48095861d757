"""
Mechanisms under audit.

Two analytic oracles (randomized response and per-canary Gaussian noise) and
a desk-scale DP-SGD trainer. Each exposes only its final output: the oracles
release one score per canary, the trainer releases the final parameters.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.stats
from scipy.special import expit

from .errors import ConfigurationError, TrainingError
from .schemas import DpSgdConfig, GaussianCanaryMech, RandomizedResponseMech
from .smallnet import (
    NetParams,
    backward,
    clip_per_example,
    forward_batch,
    init_params,
    scale_params,
    sgd_step,
    zeros_like,
)


logger = logging.getLogger(__name__)

_norm = scipy.stats.norm


@dataclass
class SyntheticDataset:
    """Class-conditional Gaussian blobs with a per-example difficulty scale."""

    features: np.ndarray      # (N, d)
    labels: np.ndarray        # (N,)
    difficulty: np.ndarray    # (N,)
    num_classes: int
    canary_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.canary_mask is None:
            self.canary_mask = np.zeros(len(self.labels), dtype=bool)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def m(self) -> int:
        return int(self.canary_mask.sum())

    def with_canaries(self, indices: Sequence[int]) -> "SyntheticDataset":
        mask = np.zeros(len(self), dtype=bool)
        mask[np.asarray(indices, dtype=np.int64)] = True
        return SyntheticDataset(
            features=self.features,
            labels=self.labels,
            difficulty=self.difficulty,
            num_classes=self.num_classes,
            canary_mask=mask,
        )

    def subset(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64)
        return self.features[idx], self.labels[idx]


def make_synthetic(
    n_total: int,
    d: int,
    num_classes: int,
    heterogeneity: float,
    rng: np.random.Generator,
    separation: float = 3.0,
    nuisance_dims: int = 0,
    nuisance_scale: float = 0.2,
) -> SyntheticDataset:
    """
    Sample a heterogeneous blob dataset.

    Class means are random directions scaled to norm `separation`, mutually
    orthogonal when num_classes <= d. Each example
    gets difficulty ~ Exp(1) and sits at mean + (1 + heterogeneity * difficulty)
    * N(0, I), so per-example score distributions differ in spread.

    Optional nuisance coordinates N(0, nuisance_scale^2) are appended after
    the d informative ones. They carry no class signal, and in high dimension
    they are nearly orthogonal across examples, so a trained network can fit
    them per example the way an image model fits pixel detail.

    Args:
        n_total: Number of examples to draw (>= 4)
        d: Informative feature dimension
        num_classes: Number of classes (>= 2)
        heterogeneity: Difficulty weight in [0, 1]
        rng: Seeded generator
        separation: Norm of the class means
        nuisance_dims: Extra per-example coordinates (0 for none)
        nuisance_scale: Std of each nuisance coordinate

    Returns:
        SyntheticDataset with d + nuisance_dims features and no canaries marked

    Raises:
        ConfigurationError: On invalid sizes
    """
    if n_total < 4:
        raise ConfigurationError(f"n_total must be >= 4, got {n_total}")
    if num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {num_classes}")
    if d < 1:
        raise ConfigurationError(f"d must be >= 1, got {d}")
    if not 0.0 <= heterogeneity <= 1.0:
        raise ConfigurationError(f"heterogeneity must lie in [0, 1], got {heterogeneity}")
    if nuisance_dims < 0 or not nuisance_scale > 0:
        raise ConfigurationError(
            f"nuisance_dims must be >= 0 and nuisance_scale > 0, got {nuisance_dims}, {nuisance_scale}"
        )

    if num_classes <= d:
        q, _ = np.linalg.qr(rng.normal(size=(d, num_classes)))
        means = separation * q.T
    else:
        means = rng.normal(size=(num_classes, d))
        means *= separation / np.linalg.norm(means, axis=1, keepdims=True)

    labels = rng.integers(0, num_classes, size=n_total)
    difficulty = rng.exponential(1.0, size=n_total)
    noise = rng.normal(size=(n_total, d))
    scale = 1.0 + heterogeneity * difficulty
    features = means[labels] + scale[:, None] * noise
    if nuisance_dims:
        features = np.hstack([features, rng.normal(0.0, nuisance_scale, size=(n_total, nuisance_dims))])

    return SyntheticDataset(
        features=features,
        labels=labels,
        difficulty=difficulty,
        num_classes=num_classes,
    )


# ---------------------------------------------------------------------------
# Analytic oracles
# ---------------------------------------------------------------------------

def rr_release(S: np.ndarray, eps_true: float, rng: np.random.Generator) -> np.ndarray:
    """
    Randomized response on +/-1 membership bits.

    Each bit is kept with probability e^eps / (e^eps + 1) and flipped
    otherwise. The released vector is the score vector.
    """
    if eps_true < 0:
        raise ConfigurationError(f"eps_true must be >= 0, got {eps_true}")
    S = np.asarray(S, dtype=np.int64)
    keep = rng.random(S.shape[0]) < expit(eps_true)
    return np.where(keep, S, -S)


def gaussian_release(S: np.ndarray, noise_sigma: float, rng: np.random.Generator) -> np.ndarray:
    """S_i + N(0, noise_sigma^2), independently per coordinate."""
    if not noise_sigma > 0:
        raise ConfigurationError(f"noise_sigma must be > 0, got {noise_sigma}")
    S = np.asarray(S, dtype=np.float64)
    return S + rng.normal(0.0, noise_sigma, size=S.shape[0])


def oracle_release(
    mechanism,
    S: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Dispatch a +/-1 membership vector to an oracle mechanism."""
    if isinstance(mechanism, RandomizedResponseMech):
        return rr_release(S, mechanism.eps_true, rng).astype(np.float64)
    if isinstance(mechanism, GaussianCanaryMech):
        return gaussian_release(S, mechanism.noise_sigma, rng)
    raise ConfigurationError(f"{type(mechanism).__name__} is not an oracle mechanism")


def _gaussian_log_delta(sigma: float, eps: float) -> float:
    # Unit-sensitivity Gaussian mechanism, exact (eps, delta) trade-off.
    t_star = eps * sigma + 1 / (2 * sigma)
    x = _norm.logcdf(1 / sigma - t_star)
    y = eps + _norm.logcdf(-t_star)
    return x + np.log1p(-np.exp(y - x)) if y <= x else -np.inf


def gaussian_delta(eps: float, noise_sigma: float, sensitivity: float = 2.0) -> float:
    """Smallest delta for which the Gaussian mechanism is (eps, delta)-DP."""
    if eps < 0:
        raise ConfigurationError(f"eps must be >= 0, got {eps}")
    return float(np.exp(_gaussian_log_delta(noise_sigma / sensitivity, eps)))


def gaussian_reference_curve(
    mechanism: GaussianCanaryMech,
    eps_grid: Optional[Sequence[float]] = None,
) -> List[Tuple[float, float]]:
    """(eps, delta) pairs of the analytic trade-off, for gap reporting only."""
    if eps_grid is None:
        eps_grid = np.linspace(0.0, 8.0, 33)
    return [
        (float(eps), gaussian_delta(float(eps), mechanism.noise_sigma, mechanism.sensitivity))
        for eps in eps_grid
    ]


# ---------------------------------------------------------------------------
# DP-SGD
# ---------------------------------------------------------------------------

@dataclass
class TrainingLog:
    """Per-step diagnostics; never holds parameters."""

    step_losses: List[float] = field(default_factory=list)
    max_applied_norms: List[float] = field(default_factory=list)
    batch_sizes: List[int] = field(default_factory=list)
    empty_batches: int = 0


def dpsgd_train(
    X: np.ndarray,
    y: np.ndarray,
    config: DpSgdConfig,
    rng: np.random.Generator,
    log: Optional[TrainingLog] = None,
) -> NetParams:
    """
    Train a classifier with DP-SGD and release only the final iterate.

    Each step Poisson-samples a batch at rate batch_size / n, clips every
    per-example gradient to clip_C, sums, adds N(0, (clip_C * noise_multiplier)^2)
    per coordinate, divides by the expected batch size and takes an SGD step.

    Args:
        X: (n, d) training features (IN examples only)
        y: (n,) class labels
        config: Trainer settings
        rng: Generator for init, sampling and noise
        log: Optional diagnostics sink

    Returns:
        Final NetParams

    Raises:
        ConfigurationError: On an empty dataset or batch_size > n
        TrainingError: If a loss or the final parameters are non-finite
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise ConfigurationError("dpsgd_train needs a nonempty dataset")
    if config.batch_size > n:
        raise ConfigurationError(f"batch_size={config.batch_size} exceeds dataset size {n}")

    net = config.net
    params = init_params(net, rng)
    rate = config.batch_size / n
    noise_std = config.clip_C * config.noise_multiplier if config.noise_multiplier > 0 else 0.0
    clip = math.isfinite(config.clip_C)

    for step in range(config.steps):
        idx = np.flatnonzero(rng.random(n) < rate)

        if idx.size:
            grads = backward(params, X[idx], y[idx], "cross_entropy")
            if not np.all(np.isfinite(grads.losses)):
                raise TrainingError(
                    f"non-finite loss at step {step}: batch of {idx.size}, "
                    f"max |loss| {np.nanmax(np.abs(grads.losses))}"
                )
            if clip:
                grads = clip_per_example(grads, config.clip_C)
            total = grads.summed(net)
        else:
            grads = None
            total = zeros_like(params)

        if noise_std > 0:
            total.weights = [w + rng.normal(0.0, noise_std, size=w.shape) for w in total.weights]
            total.biases = [b + rng.normal(0.0, noise_std, size=b.shape) for b in total.biases]

        params = sgd_step(params, scale_params(total, 1.0 / config.batch_size), config.lr)

        if log is not None:
            log.batch_sizes.append(int(idx.size))
            if grads is None:
                log.empty_batches += 1
                log.step_losses.append(float("nan"))
                log.max_applied_norms.append(0.0)
            else:
                log.step_losses.append(float(grads.losses.mean()))
                log.max_applied_norms.append(float(grads.norms.max()))
        if step % 50 == 0 and grads is not None:
            logger.debug("dpsgd step %d: batch %d, mean loss %.4f", step, idx.size, grads.losses.mean())

    if not params.is_finite():
        raise TrainingError("DP-SGD produced non-finite parameters; lower lr or clip_C")

    return params


def accuracy(params: NetParams, X: np.ndarray, y: np.ndarray) -> float:
    """Fraction of examples whose argmax logit equals the label."""
    logits = forward_batch(params, X)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(y)))
