"""
Membership scores.

Baseline scores read the released classifier directly (logit margin or
negated cross-entropy). The quantile path trains a Gaussian-likelihood
regressor on holdout examples to predict each example's score distribution
(mu, sigma) and rescores a canary as q = Phi((s - mu) / sigma).

Every score here is oriented so that larger means "more likely IN".
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr

from .errors import ConfigurationError, InputError, TrainingError
from .schemas import NetConfig, RegressorConfig
from .smallnet import (
    NetParams,
    forward,
    forward_batch,
    init_params,
    margin_score,
    mean_gradient,
    params_norm,
    scale_params,
    sgd_step,
)


logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
REGRESSOR_FORMAT = "dpaudit-regressor/1"

Orientation = Literal["higher_means_member"]


@dataclass(frozen=True)
class Score:
    """One membership score value."""

    value: float
    orientation: Orientation = "higher_means_member"

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise InputError(f"score must be finite, got {self.value}")


@dataclass
class HoldoutSet:
    """Examples never trained on and never used as canaries."""

    features: np.ndarray
    labels: np.ndarray
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if len(self.labels) == 0:
            raise InputError("holdout set is empty")
        if self.features.shape[0] != len(self.labels):
            raise InputError("holdout features and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def check_disjoint(self, *others: Sequence[int]):
        """Raise InputError if any holdout index appears in `others`."""
        mine = set(int(i) for i in self.indices)
        for other in others:
            overlap = mine.intersection(int(i) for i in other)
            if overlap:
                raise InputError(f"holdout overlaps {len(overlap)} training or canary examples")


# ---------------------------------------------------------------------------
# Baseline scores
# ---------------------------------------------------------------------------

def margin_scores(model: NetParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Batched margin_score: 2 * logit[label] - sum(logits)."""
    logits = forward_batch(model, X)
    y = _check_labels(y, logits)
    return 2.0 * logits[np.arange(len(y)), y] - logits.sum(axis=1)


def loss_scores(model: NetParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Batched negative cross-entropy, log softmax(logits)[label]."""
    logits = forward_batch(model, X)
    y = _check_labels(y, logits)
    return logits[np.arange(len(y)), y] - logsumexp(logits, axis=1)


def _check_labels(y: np.ndarray, logits: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.shape[0] != logits.shape[0]:
        raise ConfigurationError(f"{y.shape[0]} labels for {logits.shape[0]} examples")
    if np.any(y < 0) or np.any(y >= logits.shape[1]):
        raise InputError(f"labels must lie in [0, {logits.shape[1]})")
    return y


BASE_SCORES: Dict[str, Callable[[NetParams, np.ndarray, np.ndarray], np.ndarray]] = {
    "margin": margin_scores,
    "loss": loss_scores,
}


def score_margin(model: NetParams, x: np.ndarray, label: int) -> Score:
    if model.config.head != "logits":
        raise ConfigurationError("score_margin needs a classifier network")
    return Score(margin_score(forward(model, x), label))


def score_loss(model: NetParams, x: np.ndarray, label: int) -> Score:
    if model.config.head != "logits":
        raise ConfigurationError("score_loss needs a classifier network")
    logits = forward(model, x)
    if not 0 <= label < logits.shape[0]:
        raise InputError(f"label {label} out of range for {logits.shape[0]} logits")
    return Score(float(logits[label] - logsumexp(logits)))


def base_scores(name: str, model: NetParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name not in BASE_SCORES:
        raise ConfigurationError(f"unknown base score '{name}'")
    return BASE_SCORES[name](model, X, y)


# ---------------------------------------------------------------------------
# Gaussian-likelihood regressor
# ---------------------------------------------------------------------------

def normal_cdf(t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Standard normal CDF."""
    return ndtr(t)


@dataclass
class TrainedRegressor:
    """
    Predicts (mu, sigma) of an example's base score from its features and label.

    The network works on standardized inputs and targets; `predict` maps its
    outputs back to score units. When num_classes > 0 the one-hot label is
    appended to the standardized features.
    """

    params: NetParams
    base_score: str
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    target_mean: float = 0.0
    target_scale: float = 1.0
    num_classes: int = 0
    nll_trace: List[float] = field(default_factory=list)
    sigma_clamp_count: int = 0
    validation_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def inputs(self, X: np.ndarray, y: Optional[np.ndarray] = None) -> np.ndarray:
        """Network inputs for raw features (and labels, when the regressor uses them)."""
        Z = (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.feature_mean) / self.feature_scale
        if self.num_classes == 0:
            return Z
        if y is None:
            raise InputError("this regressor conditions on labels; pass y")
        return np.hstack([Z, _one_hot(y, self.num_classes, Z.shape[0])])

    def predict(self, X: np.ndarray, y: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Predicted mean and standard deviation, each shape (B,)."""
        out = forward_batch(self.params, self.inputs(X, y))
        mu = self.target_mean + self.target_scale * out[:, 0]
        sigma = self.target_scale * np.exp(out[:, 1])
        return mu, sigma

    def mean_nll(self, X: np.ndarray, s: np.ndarray, y: Optional[np.ndarray] = None) -> float:
        """Mean Gaussian NLL of scores s, in score units."""
        mu, sigma = self.predict(X, y)
        sigma = np.maximum(sigma, SIGMA_FLOOR)
        s = np.asarray(s, dtype=np.float64)
        return float(np.mean((s - mu) ** 2 / (2.0 * sigma ** 2) + np.log(sigma)))

    @property
    def final_nll(self) -> Optional[float]:
        return min(self.nll_trace) if self.nll_trace else None


def _one_hot(y: np.ndarray, num_classes: int, rows: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.shape[0] != rows:
        raise ConfigurationError(f"{y.shape[0]} labels for {rows} examples")
    if np.any(y < 0) or np.any(y >= num_classes):
        raise InputError(f"labels must lie in [0, {num_classes})")
    return np.eye(num_classes)[y]


def constant_regressor(mu: float, sigma: float, input_dim: int, base_score: str = "margin") -> TrainedRegressor:
    """Regressor that predicts the same (mu, sigma) for every input."""
    if not sigma > 0:
        raise ConfigurationError(f"sigma must be > 0, got {sigma}")
    config = NetConfig(input_dim=input_dim, hidden_dims=[], output_dim=2, activation="tanh", head="gaussian")
    params = NetParams(
        config=config,
        weights=[np.zeros((input_dim, 2))],
        biases=[np.array([float(mu), float(np.log(sigma))])],
    )
    return TrainedRegressor(
        params=params,
        base_score=base_score,
        feature_mean=np.zeros(input_dim),
        feature_scale=np.ones(input_dim),
    )


def _standardizer(values: np.ndarray) -> Tuple[float, float]:
    mean = float(values.mean())
    scale = float(values.std())
    return mean, scale if scale > 1e-12 else 1.0


def _feature_standardizer(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # Per-coordinate centering, one shared scale: low-variance coordinates stay small.
    mean = X.mean(axis=0)
    scale = float(np.sqrt(np.mean(X.var(axis=0))))
    scale = scale if scale > 1e-12 else 1.0
    return mean, np.full(X.shape[1], scale)


def _mean_standardized_nll(params: NetParams, Z: np.ndarray, t: np.ndarray) -> float:
    out = forward_batch(params, Z)
    resid = t - out[:, 0]
    return float(np.mean(0.5 * resid ** 2 * np.exp(-2.0 * out[:, 1]) + out[:, 1]))


def _split_validation(h: int, fraction: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    if fraction == 0 or h < 2:
        everything = np.arange(h)
        return everything, everything
    n_val = min(max(int(round(h * fraction)), 1), h - 1)
    order = rng.permutation(h)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train_regressor(
    holdout: HoldoutSet,
    target_model: NetParams,
    base_score: str,
    config: RegressorConfig,
    rng: np.random.Generator,
) -> TrainedRegressor:
    """
    Fit the Gaussian-likelihood regressor on holdout scores.

    Scores s(x) come from the released target model. Features are centered
    per coordinate and divided by one shared scale, the one-hot label is
    appended when config.use_labels is set, and targets are standardized.
    Minibatch SGD runs on the mean Gaussian NLL with the batch gradient
    clipped to max_grad_norm.

    A val_fraction share of the holdout is held back; the trace records the
    NLL on that share and the epoch with the lowest value is kept. With
    val_fraction = 0 the whole holdout is both fitted and tracked. Either way
    the kept NLL never exceeds the initial one.

    Args:
        holdout: Examples disjoint from canaries and training data
        target_model: Released classifier
        base_score: "margin" or "loss"
        config: Architecture and optimizer settings
        rng: Generator for the split, initialization and shuffling

    Returns:
        TrainedRegressor with nll_trace[0] the NLL before training

    Raises:
        TrainingError: If the scores or the NLL become non-finite
    """
    X = np.asarray(holdout.features, dtype=np.float64)
    s = base_scores(base_score, target_model, X, holdout.labels)
    if not np.all(np.isfinite(s)):
        raise TrainingError("holdout base scores are not finite")

    fit_idx, val_idx = _split_validation(len(s), config.val_fraction, rng)
    feature_mean, feature_scale = _feature_standardizer(X[fit_idx])
    target_mean, target_scale = _standardizer(s[fit_idx])
    num_classes = target_model.config.output_dim if config.use_labels else 0
    params = init_params(config.net_config(X.shape[1] + num_classes), rng)
    regressor = TrainedRegressor(
        params=params,
        base_score=base_score,
        feature_mean=feature_mean,
        feature_scale=feature_scale,
        target_mean=target_mean,
        target_scale=target_scale,
        num_classes=num_classes,
        validation_indices=val_idx if config.val_fraction > 0 else np.zeros(0, dtype=np.int64),
    )
    Z = regressor.inputs(X, holdout.labels)
    t = (s - target_mean) / target_scale
    log_scale = float(np.log(target_scale))
    Z_fit, t_fit, Z_val, t_val = Z[fit_idx], t[fit_idx], Z[val_idx], t[val_idx]

    h = len(t_fit)
    batch = h if config.batch_size == 0 else min(config.batch_size, h)

    nll = _mean_standardized_nll(params, Z_val, t_val)
    trace = [nll + log_scale]
    best_params, best_nll = params, nll

    for epoch in range(config.epochs):
        order = rng.permutation(h)
        for start in range(0, h, batch):
            idx = order[start:start + batch]
            grad = mean_gradient(params, Z_fit[idx], t_fit[idx], "gaussian_nll")
            norm = params_norm(grad)
            if not np.isfinite(norm):
                raise TrainingError(f"regressor gradient became non-finite in epoch {epoch}")
            if norm > config.max_grad_norm:
                grad = scale_params(grad, config.max_grad_norm / norm)
            params = sgd_step(params, grad, config.lr)

        nll = _mean_standardized_nll(params, Z_val, t_val)
        if not np.isfinite(nll):
            raise TrainingError(f"regressor NLL diverged in epoch {epoch}: {nll}")
        trace.append(nll + log_scale)
        if nll < best_nll:
            best_params, best_nll = params, nll

    logger.debug(
        "regressor on %d holdout examples (%d tracked): NLL %.4f -> %.4f over %d epochs",
        h, len(t_val), trace[0], best_nll + log_scale, config.epochs,
    )
    regressor.params = best_params
    regressor.nll_trace = trace
    return regressor


# ---------------------------------------------------------------------------
# Rescoring
# ---------------------------------------------------------------------------

def _clamped_sigma(regressor: TrainedRegressor, sigma: np.ndarray) -> np.ndarray:
    low = sigma < SIGMA_FLOOR
    if np.any(low):
        regressor.sigma_clamp_count += int(low.sum())
        logger.warning("clamped %d predicted sigmas to %g", int(low.sum()), SIGMA_FLOOR)
    return np.maximum(sigma, SIGMA_FLOOR)


def standardized_scores(
    regressor: TrainedRegressor,
    target_model: NetParams,
    X: np.ndarray,
    y: np.ndarray,
) -> np.ndarray:
    """z = (s - mu) / sigma for each example."""
    s = base_scores(regressor.base_score, target_model, X, y)
    mu, sigma = regressor.predict(X, y)
    return (s - mu) / _clamped_sigma(regressor, sigma)


def rescore(regressor: TrainedRegressor, target_model: NetParams, x: np.ndarray, label: int) -> Score:
    """q = Phi((s(x) - mu(x)) / sigma(x)) for one example; q lies in (0, 1)."""
    q = rescore_batch(regressor, target_model, np.atleast_2d(x), np.array([label]))
    return Score(float(q[0]))


def rescore_batch(
    regressor: TrainedRegressor,
    target_model: NetParams,
    X: np.ndarray,
    y: np.ndarray,
) -> np.ndarray:
    """q for every row of X; see rescore."""
    return normal_cdf(standardized_scores(regressor, target_model, X, y))


def quantile_logit(z: np.ndarray) -> np.ndarray:
    """log(q / (1 - q)) for q = Phi(z), computed without saturating at 0 or 1."""
    z = np.asarray(z, dtype=np.float64)
    return log_ndtr(z) - log_ndtr(-z)


def quantile_scores(
    regressor: TrainedRegressor,
    target_model: NetParams,
    X: np.ndarray,
    y: np.ndarray,
) -> np.ndarray:
    """
    Game-ready quantile scores.

    Ranks identically to q but stays strictly increasing where q itself rounds
    to 0 or 1 in double precision.
    """
    return quantile_logit(standardized_scores(regressor, target_model, X, y))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_regressor(regressor: TrainedRegressor, path: Union[str, Path]) -> Path:
    """
    Write a regressor snapshot as .npz.

    The `header` entry is a JSON document whose `format` field is
    REGRESSOR_FORMAT; arrays are stored as W0, b0, W1, b1, ...
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": REGRESSOR_FORMAT,
        "net": regressor.params.config.model_dump(),
        "base_score": regressor.base_score,
        "target_mean": regressor.target_mean,
        "target_scale": regressor.target_scale,
        "num_classes": regressor.num_classes,
        "nll_trace": list(regressor.nll_trace),
        "sigma_clamp_count": regressor.sigma_clamp_count,
    }
    arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
    arrays["feature_mean"] = regressor.feature_mean
    arrays["feature_scale"] = regressor.feature_scale
    for i, (w, b) in enumerate(zip(regressor.params.weights, regressor.params.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_regressor(path: Union[str, Path]) -> TrainedRegressor:
    """
    Read a snapshot written by save_regressor.

    Raises:
        InputError: On a missing file or an unknown format header
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"regressor file not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != REGRESSOR_FORMAT:
            raise InputError(f"unsupported regressor format '{header.get('format')}' in {path}")
        config = NetConfig(**header["net"])
        n_layers = len(config.layer_dims) - 1
        params = NetParams(
            config=config,
            weights=[data[f"W{i}"] for i in range(n_layers)],
            biases=[data[f"b{i}"] for i in range(n_layers)],
        )
        return TrainedRegressor(
            params=params,
            base_score=header["base_score"],
            feature_mean=data["feature_mean"],
            feature_scale=data["feature_scale"],
            target_mean=header["target_mean"],
            target_scale=header["target_scale"],
            num_classes=header.get("num_classes", 0),
            nll_trace=list(header["nll_trace"]),
            sigma_clamp_count=header["sigma_clamp_count"],
        )
