"""
Data models for one-run privacy audits.

Defines Pydantic schemas for experiment configuration, audit outcomes and
persisted results.
"""

import math
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator


SCHEMA_VERSION = "1"

GameName = Literal["binary", "kary"]
ScoreMethod = Literal["release", "margin", "loss", "quantile"]


# ---------------------------------------------------------------------------
# Networks and mechanisms
# ---------------------------------------------------------------------------

class NetConfig(BaseModel):
    """Architecture of a small feed-forward network."""

    input_dim: int = Field(ge=1)
    hidden_dims: List[int] = Field(default_factory=lambda: [32])
    output_dim: int = Field(ge=1)
    activation: Literal["relu", "tanh"] = "relu"
    head: Literal["logits", "gaussian"] = "logits"

    @field_validator("hidden_dims")
    @classmethod
    def _positive_widths(cls, widths: List[int]) -> List[int]:
        if any(w < 1 for w in widths):
            raise ValueError(f"hidden_dims must all be >= 1, got {widths}")
        return widths

    @model_validator(mode="after")
    def _gaussian_head_has_two_outputs(self) -> "NetConfig":
        if self.head == "gaussian" and self.output_dim != 2:
            raise ValueError("gaussian head requires output_dim = 2 (mu, log sigma)")
        return self

    @property
    def layer_dims(self) -> List[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]


class DpSgdConfig(BaseModel):
    """DP-SGD trainer settings."""

    clip_C: float = Field(gt=0, description="Per-example L2 clip norm; inf disables clipping")
    noise_multiplier: float = Field(ge=0, description="Noise std is clip_C * noise_multiplier")
    steps: int = Field(ge=1)
    batch_size: int = Field(ge=1, description="Expected Poisson batch size")
    lr: float = Field(gt=0)
    net: NetConfig

    @model_validator(mode="after")
    def _noise_needs_finite_clip(self) -> "DpSgdConfig":
        if self.noise_multiplier > 0 and math.isinf(self.clip_C):
            raise ValueError("noise_multiplier > 0 requires a finite clip_C")
        return self


class RandomizedResponseMech(BaseModel):
    """Per-canary randomized response; exactly eps_true-DP per bit."""

    kind: Literal["rr"] = "rr"
    eps_true: float = Field(ge=0)


class GaussianCanaryMech(BaseModel):
    """Per-canary Gaussian noise on the +/-1 membership bit."""

    kind: Literal["gaussian"] = "gaussian"
    noise_sigma: float = Field(gt=0)
    sensitivity: float = Field(default=2.0, gt=0, description="Gap between S_i = +1 and S_i = -1")


class DpSgdMech(BaseModel):
    """DP-SGD trained classifier; only the final parameters are released."""

    kind: Literal["dpsgd"] = "dpsgd"
    dpsgd: DpSgdConfig


MechanismSpec = Annotated[
    Union[RandomizedResponseMech, GaussianCanaryMech, DpSgdMech],
    Field(discriminator="kind"),
]


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

class DataSpec(BaseModel):
    """Sizes of the canary, non-auditing and holdout pools."""

    n: Optional[int] = Field(default=None, ge=1, description="Training set size; derived when omitted")
    m: int = Field(ge=2, description="Number of canaries")
    r: int = Field(default=0, ge=0, description="Number of non-auditing training examples")
    d: int = Field(default=10, ge=1, description="Class-informative features")
    num_classes: int = Field(default=4, ge=2)
    heterogeneity: float = Field(default=0.0, ge=0.0, le=1.0)
    separation: float = Field(default=3.0, gt=0)
    nuisance_dims: int = Field(default=0, ge=0, description="Per-example coordinates with no class signal")
    nuisance_scale: float = Field(default=0.2, gt=0, description="Std of each nuisance coordinate")
    holdout_size: Optional[int] = Field(default=None, ge=1, description="Defaults to 2 * m")

    @property
    def resolved_holdout(self) -> int:
        return self.holdout_size if self.holdout_size is not None else 2 * self.m

    @property
    def feature_dim(self) -> int:
        return self.d + self.nuisance_dims


class GameSpec(BaseModel):
    """Which guessing games to play."""

    binary: bool = True
    kary: bool = True
    K: int = Field(default=2, ge=2, description="Canary set size for the reconstruction game")

    @model_validator(mode="after")
    def _at_least_one(self) -> "GameSpec":
        if not (self.binary or self.kary):
            raise ValueError("at least one of binary / kary must be enabled")
        return self

    @property
    def enabled(self) -> List[str]:
        return [g for g, on in (("binary", self.binary), ("kary", self.kary)) if on]

    def arity(self, game: str) -> int:
        return 2 if game == "binary" else self.K


class RegressorConfig(BaseModel):
    """Gaussian-likelihood regressor training settings."""

    hidden_dims: List[int] = Field(default_factory=lambda: [32, 32])
    activation: Literal["relu", "tanh"] = "tanh"
    epochs: int = Field(default=150, ge=1)
    lr: float = Field(default=0.05, ge=0)
    batch_size: int = Field(default=64, ge=0, description="0 means full batch")
    max_grad_norm: float = Field(default=5.0, gt=0)
    use_labels: bool = Field(default=True, description="Append the one-hot label to the regressor input")
    val_fraction: float = Field(default=0.2, ge=0, lt=1, description="Holdout share used to pick the kept epoch")

    def net_config(self, input_dim: int) -> NetConfig:
        return NetConfig(
            input_dim=input_dim,
            hidden_dims=list(self.hidden_dims),
            output_dim=2,
            activation=self.activation,
            head="gaussian",
        )


class ScoreSpec(BaseModel):
    """Scoring functions to compare within each trial."""

    methods: Optional[List[ScoreMethod]] = None
    base_score: Literal["margin", "loss"] = "margin"
    regressor: RegressorConfig = Field(default_factory=RegressorConfig)


class SweepSpec(BaseModel):
    """Guess-budget grid."""

    step: int = Field(default=10, ge=1)
    budgets: Optional[List[int]] = None

    @field_validator("budgets")
    @classmethod
    def _nonempty_positive(cls, budgets: Optional[List[int]]) -> Optional[List[int]]:
        if budgets is not None:
            if not budgets:
                raise ValueError("budgets must be nonempty when given")
            if any(b < 0 for b in budgets):
                raise ValueError(f"budgets must be >= 0, got {budgets}")
        return budgets


class ExperimentConfig(BaseModel):
    """Complete description of an audit experiment."""

    name: str = "audit"
    mechanism: MechanismSpec
    data: DataSpec
    games: GameSpec = Field(default_factory=GameSpec)
    scores: ScoreSpec = Field(default_factory=ScoreSpec)
    trials: int = Field(default=5, ge=1)
    base_seed: int = Field(default=0, ge=0, le=2**64 - 1)
    alpha: float = Field(default=0.05, gt=0, lt=1)
    sweep: SweepSpec = Field(default_factory=SweepSpec)
    output_dir: Optional[str] = None

    @property
    def is_oracle(self) -> bool:
        return self.mechanism.kind in ("rr", "gaussian")

    @property
    def methods(self) -> List[str]:
        return list(self.scores.methods or [])

    def training_size(self, game: str) -> int:
        """n = r + m/2 for the binary game, n = r + m/K for the K-ary game."""
        return self.data.r + self.data.m // self.games.arity(game)

    @property
    def shared_release(self) -> bool:
        """Both games read one release when the K-ary game uses pairs."""
        return self.games.binary and self.games.kary and self.games.K == 2

    @model_validator(mode="after")
    def _check_invariants(self) -> "ExperimentConfig":
        data, games = self.data, self.games

        if games.binary and data.m % 2 != 0:
            raise ValueError(f"binary game needs an even number of canaries, got m={data.m}")
        if games.kary and data.m % games.K != 0:
            raise ValueError(f"kary game needs m to be a multiple of K={games.K}, got m={data.m}")

        if data.n is not None:
            for game in games.enabled:
                expected = self.training_size(game)
                if data.n != expected:
                    raise ValueError(
                        f"{game} game requires n = r + m/{games.arity(game)} = {expected}, got n={data.n}"
                    )

        if self.scores.methods is None:
            self.scores.methods = ["release"] if self.is_oracle else ["margin", "quantile"]
        methods = self.scores.methods
        if not methods:
            raise ValueError("at least one score method is required")
        if len(set(methods)) != len(methods):
            raise ValueError(f"duplicate score methods: {methods}")

        if self.is_oracle:
            if methods != ["release"]:
                raise ValueError("oracle mechanisms release scores directly; use methods: [release]")
        else:
            if "release" in methods:
                raise ValueError("'release' scoring only applies to the rr / gaussian oracles")
            net = self.mechanism.dpsgd.net
            if net.head != "logits":
                raise ValueError("the DP-SGD target network needs a logits head")
            if net.input_dim != data.feature_dim:
                raise ValueError(
                    f"net.input_dim={net.input_dim} does not match data.d + data.nuisance_dims={data.feature_dim}"
                )
            if net.output_dim != data.num_classes:
                raise ValueError(
                    f"net.output_dim={net.output_dim} does not match data.num_classes={data.num_classes}"
                )
            for game in games.enabled:
                if self.mechanism.dpsgd.batch_size > self.training_size(game):
                    raise ValueError(
                        f"batch_size={self.mechanism.dpsgd.batch_size} exceeds training size "
                        f"{self.training_size(game)} of the {game} game"
                    )

        return self


# ---------------------------------------------------------------------------
# Estimator records
# ---------------------------------------------------------------------------

class AuditOutcome(BaseModel):
    """Guess tally fed to the estimator."""

    k: int = Field(ge=0, description="Guesses made")
    c: int = Field(ge=0, description="Correct guesses")
    K: int = Field(default=2, ge=2, description="Arity of the guessing game")
    alpha: float = Field(default=0.05, gt=0, lt=1, description="Significance level")

    @model_validator(mode="after")
    def _correct_within_guesses(self) -> "AuditOutcome":
        if self.c > self.k:
            raise ValueError(f"correct guesses c={self.c} exceed guesses k={self.k}")
        return self


class EpsLowerBound(BaseModel):
    """Empirical epsilon lower bound for one outcome."""

    eps: float = Field(ge=0)
    outcome: AuditOutcome
    method: Literal["or", "or_fdp"]

    @field_validator("eps")
    @classmethod
    def _finite(cls, eps: float) -> float:
        if not math.isfinite(eps):
            raise ValueError("eps must be finite")
        return eps


class SweepPoint(BaseModel):
    """One budget of a guess-budget sweep."""

    budget: int
    k: int
    c: int
    eps: float


class SweepResult(BaseModel):
    """Best bound over a sweep together with the whole curve."""

    best: EpsLowerBound
    curve: List[SweepPoint] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# Persisted results
# ---------------------------------------------------------------------------

class MethodRecord(BaseModel):
    """Bounds obtained with one scoring method in one trial."""

    method: str
    eps_or: Optional[float] = None
    eps_or_fdp: Optional[float] = None
    eps_max: float = 0.0
    binary_sweep: Optional[SweepResult] = None
    kary_sweep: Optional[SweepResult] = None


class TrialRecord(BaseModel):
    """Everything recorded for one trial."""

    trial: int
    seed: int
    release_hashes: Dict[str, str] = Field(default_factory=dict)
    shared_release: bool = True
    methods: List[MethodRecord] = Field(default_factory=list)
    regressor_nll_trace: Dict[str, List[float]] = Field(default_factory=dict)
    sigma_clamps: int = 0

    def method(self, name: str) -> MethodRecord:
        for record in self.methods:
            if record.method == name:
                return record
        raise KeyError(name)


class AggregateRow(BaseModel):
    """Mean over trials of the per-trial bounds for one method."""

    method: str
    trials: int
    eps_or: Optional[float] = None
    eps_or_fdp: Optional[float] = None
    eps_max: float = 0.0


class AuditResult(BaseModel):
    """Persisted record of an experiment."""

    schema_version: str = SCHEMA_VERSION
    config: ExperimentConfig
    trials: List[TrialRecord] = Field(default_factory=list)
    aggregates: List[AggregateRow] = Field(default_factory=list)
    ground_truth: Optional[Dict[str, float]] = None
    reference_curve: Optional[List[Tuple[float, float]]] = None
    notes: List[str] = Field(default_factory=list)

    def missing_trials(self) -> List[int]:
        """Trial indices the config asks for that have no record."""
        present = {t.trial for t in self.trials}
        return [t for t in range(self.config.trials) if t not in present]

    def aggregate(self, method: str) -> AggregateRow:
        for row in self.aggregates:
            if row.method == method:
                return row
        raise KeyError(method)
