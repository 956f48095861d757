"""
Experiment Harness

Runs multi-trial audits: seeds each trial, samples data, partitions canaries,
runs the mechanism once per release, scores canaries with every configured
method against that same release, sweeps guess budgets and aggregates.
"""

import hashlib
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from .config import dump_config, runs_dir
from .errors import AuditError, ConfigurationError, InputError
from .estimator import budget_grid, eps_max, eps_sweep
from .game import (
    BinaryGameState,
    KaryGameState,
    binary_from_pairs,
    partition_binary,
    partition_kary,
    set_scores,
)
from .mechanisms import (
    SyntheticDataset,
    TrainingLog,
    dpsgd_train,
    gaussian_reference_curve,
    make_synthetic,
    oracle_release,
)
from .schemas import (
    AggregateRow,
    AuditResult,
    ExperimentConfig,
    MethodRecord,
    SweepResult,
    TrialRecord,
)
from .scores import (
    HoldoutSet,
    TrainedRegressor,
    base_scores,
    quantile_scores,
    save_regressor,
    train_regressor,
)
from .seeding import TrialStreams, trial_streams
from .smallnet import NetParams


logger = logging.getLogger(__name__)

Release = Union[NetParams, np.ndarray]

DELTA_NOTE = (
    "delta ignored: bounds are computed for delta = 0; a conservative "
    "(eps, delta) interpretation is not claimed"
)


def release_hash(release: Release) -> str:
    """sha256 of a release's float64 bytes."""
    if isinstance(release, NetParams):
        payload = release.to_bytes()
    else:
        payload = np.ascontiguousarray(release, dtype=np.float64).tobytes()
    return hashlib.sha256(payload).hexdigest()


class ReleaseLedger:
    """
    The only channel from a mechanism to the scoring layer.

    Each release key is published once (the final output); every read is
    logged with the hash it saw so pairing can be checked afterwards.
    """

    def __init__(self):
        self._releases: Dict[str, Release] = {}
        self._hashes: Dict[str, str] = {}
        self.reads: List[Tuple[str, str, str]] = []

    def publish(self, key: str, release: Release) -> str:
        if key in self._releases:
            raise AuditError(f"release '{key}' was already published; only the final output may cross")
        digest = release_hash(release)
        self._releases[key] = release
        self._hashes[key] = digest
        return digest

    def fetch(self, key: str, method: str) -> Release:
        if key not in self._releases:
            raise AuditError(f"no release published under '{key}'")
        release = self._releases[key]
        self.reads.append((key, method, release_hash(release)))
        return release

    @property
    def hashes(self) -> Dict[str, str]:
        return dict(self._hashes)

    def assert_paired(self):
        """Every method must have read exactly the bytes that were published."""
        for key, method, seen in self.reads:
            if seen != self._hashes[key]:
                raise AuditError(f"method '{method}' read a modified '{key}' release")


@dataclass
class GameView:
    """One release and the game states that read it."""

    key: str
    binary: Optional[BinaryGameState] = None
    kary: Optional[KaryGameState] = None

    @property
    def canaries(self) -> np.ndarray:
        if self.kary is not None:
            return self.kary.canary_sets.ravel()
        return self.binary.canary_indices

    @property
    def in_indices(self) -> np.ndarray:
        if self.kary is not None:
            return self.kary.in_indices
        return self.binary.in_indices

    @property
    def membership(self) -> np.ndarray:
        """+/-1 per canary, in `canaries` order."""
        if self.kary is not None:
            return self.kary.membership().ravel()
        return self.binary.S


@dataclass
class TrialArtifacts:
    """What a trial leaves behind besides its record."""

    scores: Dict[str, np.ndarray] = field(default_factory=dict)
    regressors: Dict[str, TrainedRegressor] = field(default_factory=dict)
    training_logs: Dict[str, TrainingLog] = field(default_factory=dict)


class AuditRunner:
    """
    Runs the trials of one ExperimentConfig.

    Results are a pure function of the config, including base_seed.
    """

    def __init__(self, config: ExperimentConfig, progress: bool = True):
        self.config = config
        self.progress = progress
        self.binary_grid: List[int] = []
        self.kary_grid: List[int] = []
        if config.games.binary:
            self.binary_grid = budget_grid(config.data.m, config.sweep.step, config.sweep.budgets)
        if config.games.kary:
            self.kary_grid = budget_grid(config.data.m // config.games.K, config.sweep.step, config.sweep.budgets)
        logger.debug("budget grids: binary %d points, kary %d points", len(self.binary_grid), len(self.kary_grid))

    # -- partitions ---------------------------------------------------------

    def _views(self, canaries: np.ndarray, non_canaries: np.ndarray, streams: TrialStreams) -> List[GameView]:
        games = self.config.games
        if self.config.shared_release:
            state, _ = partition_kary(canaries, non_canaries, 2, streams.generator("partition_kary"))
            return [GameView(key="shared", binary=binary_from_pairs(state), kary=state)]

        views = []
        if games.binary:
            state, _ = partition_binary(canaries, non_canaries, streams.generator("partition_binary"))
            views.append(GameView(key="binary", binary=state))
        if games.kary:
            state, _ = partition_kary(canaries, non_canaries, games.K, streams.generator("partition_kary"))
            views.append(GameView(key="kary", kary=state))
        return views

    def _mechanism_stream(self, view: GameView, streams: TrialStreams) -> np.random.Generator:
        return streams.generator("mechanism_kary" if view.key == "kary" else "mechanism_binary")

    # -- scoring ------------------------------------------------------------

    def _oracle_scores(self, view: GameView, ledger: ReleaseLedger) -> Dict[str, np.ndarray]:
        return {"release": np.asarray(ledger.fetch(view.key, "release"), dtype=np.float64)}

    def _model_scores(
        self,
        view: GameView,
        ledger: ReleaseLedger,
        data: SyntheticDataset,
        holdout: HoldoutSet,
        regressor_rng: np.random.Generator,
        artifacts: TrialArtifacts,
    ) -> Dict[str, np.ndarray]:
        X, y = data.subset(view.canaries)
        scores = {}
        for method in self.config.methods:
            model = ledger.fetch(view.key, method)
            if method == "quantile":
                regressor = train_regressor(
                    holdout, model, self.config.scores.base_score, self.config.scores.regressor, regressor_rng
                )
                artifacts.regressors[view.key] = regressor
                scores[method] = quantile_scores(regressor, model, X, y)
            else:
                scores[method] = base_scores(method, model, X, y)
        return scores

    # -- trials -------------------------------------------------------------

    def run_trial(self, trial: int) -> Tuple[TrialRecord, TrialArtifacts]:
        """
        Run one trial end to end.

        Args:
            trial: Trial index; together with base_seed it fixes every draw

        Returns:
            (TrialRecord, TrialArtifacts)
        """
        config = self.config
        streams = trial_streams(config.base_seed, trial)
        m, r = config.data.m, config.data.r
        artifacts = TrialArtifacts()
        ledger = ReleaseLedger()

        data: Optional[SyntheticDataset] = None
        holdout: Optional[HoldoutSet] = None
        if config.is_oracle:
            canaries = np.arange(m)
            non_canaries = np.arange(m, m + r)
        else:
            h = config.data.resolved_holdout
            data = make_synthetic(
                m + r + h,
                config.data.d,
                config.data.num_classes,
                config.data.heterogeneity,
                streams.generator("data"),
                separation=config.data.separation,
                nuisance_dims=config.data.nuisance_dims,
                nuisance_scale=config.data.nuisance_scale,
            )
            order = streams.generator("pool").permutation(m + r + h)
            canaries, non_canaries, held = order[:m], order[m:m + r], order[m + r:]
            data = data.with_canaries(canaries)
            hx, hy = data.subset(held)
            holdout = HoldoutSet(features=hx, labels=hy, indices=held)
            holdout.check_disjoint(canaries, non_canaries)

        views = self._views(canaries, non_canaries, streams)
        regressor_rng = streams.generator("regressor")

        per_method: Dict[str, Dict[str, SweepResult]] = {method: {} for method in config.methods}
        for view in views:
            rng = self._mechanism_stream(view, streams)
            if config.is_oracle:
                ledger.publish(view.key, oracle_release(config.mechanism, view.membership, rng))
                scores = self._oracle_scores(view, ledger)
            else:
                X_in, y_in = data.subset(view.in_indices)
                log = TrainingLog()
                ledger.publish(view.key, dpsgd_train(X_in, y_in, config.mechanism.dpsgd, rng, log=log))
                artifacts.training_logs[view.key] = log
                if log.empty_batches:
                    logger.warning("trial %d: %d empty Poisson batches in '%s'", trial, log.empty_batches, view.key)
                scores = self._model_scores(view, ledger, data, holdout, regressor_rng, artifacts)

            for method, Y in scores.items():
                artifacts.scores[f"{method}__{view.key}__Y"] = Y
                if view.binary is not None:
                    per_method[method]["binary"] = eps_sweep(
                        view.binary.S, Y, "binary", self.binary_grid, config.alpha
                    )
                if view.kary is not None:
                    per_method[method]["kary"] = eps_sweep(
                        view.kary.u, set_scores(Y, view.kary), "kary", self.kary_grid, config.alpha
                    )
            if view.binary is not None:
                artifacts.scores[f"{view.key}__S"] = view.binary.S
            if view.kary is not None:
                artifacts.scores[f"{view.key}__u"] = view.kary.u

        ledger.assert_paired()

        methods = [method_record(method, per_method[method]) for method in config.methods]
        record = TrialRecord(
            trial=trial,
            seed=streams.seed,
            release_hashes=ledger.hashes,
            shared_release=config.shared_release,
            methods=methods,
            regressor_nll_trace={key: reg.nll_trace for key, reg in artifacts.regressors.items()},
            sigma_clamps=sum(reg.sigma_clamp_count for reg in artifacts.regressors.values()),
        )
        logger.info(
            "trial %d: %s",
            trial,
            ", ".join(f"{rec.method} eps_max={rec.eps_max:.4f}" for rec in methods),
        )
        return record, artifacts

    def run(self, out_dir: Optional[Union[str, Path]] = None) -> AuditResult:
        """
        Run every trial and assemble the result.

        Args:
            out_dir: Run directory to write; nothing is written when None
        """
        config = self.config
        records: List[TrialRecord] = []
        artifacts: Dict[int, TrialArtifacts] = {}
        for trial in tqdm(range(config.trials), desc=config.name, disable=not self.progress):
            record, trial_artifacts = self.run_trial(trial)
            records.append(record)
            artifacts[trial] = trial_artifacts

        result = AuditResult(
            config=config,
            trials=records,
            aggregates=aggregate(records, config.methods),
            ground_truth=ground_truth(config),
            reference_curve=reference_curve(config),
            notes=notes(config),
        )
        if out_dir is not None:
            write_run_dir(result, artifacts, out_dir)
        return result


def method_record(method: str, sweeps: Dict[str, SweepResult]) -> MethodRecord:
    """Fold a method's sweeps into eps_or, eps_or_fdp and their maximum."""
    binary, kary = sweeps.get("binary"), sweeps.get("kary")
    if binary is not None and kary is not None:
        best = eps_max(binary.best, kary.best)
    else:
        best = (binary or kary).best.eps
    return MethodRecord(
        method=method,
        eps_or=binary.best.eps if binary is not None else None,
        eps_or_fdp=kary.best.eps if kary is not None else None,
        eps_max=best,
        binary_sweep=binary,
        kary_sweep=kary,
    )


def _mean(values: List[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def aggregate(records: List[TrialRecord], methods: List[str]) -> List[AggregateRow]:
    """Arithmetic mean over trials of each per-trial bound (mean of maxima)."""
    rows = []
    for method in methods:
        per_trial = [record.method(method) for record in records]
        rows.append(AggregateRow(
            method=method,
            trials=len(per_trial),
            eps_or=_mean([rec.eps_or for rec in per_trial]),
            eps_or_fdp=_mean([rec.eps_or_fdp for rec in per_trial]),
            eps_max=float(np.mean([rec.eps_max for rec in per_trial])),
        ))
    return rows


def ground_truth(config: ExperimentConfig) -> Optional[Dict[str, float]]:
    """
    True epsilon of each game for randomized response.

    Adding or removing one canary flips one released bit (eps_true); the
    K-ary game replaces the chosen member, which touches two bits.
    """
    if config.mechanism.kind != "rr":
        return None
    eps = config.mechanism.eps_true
    truth = {}
    if config.games.binary:
        truth["binary"] = eps
    if config.games.kary:
        truth["kary"] = 2.0 * eps
    return truth


def reference_curve(config: ExperimentConfig) -> Optional[List[Tuple[float, float]]]:
    if config.mechanism.kind != "gaussian":
        return None
    return gaussian_reference_curve(config.mechanism)


def notes(config: ExperimentConfig) -> List[str]:
    out = []
    kind = config.mechanism.kind
    if kind == "gaussian" or (kind == "dpsgd" and config.mechanism.dpsgd.noise_multiplier > 0):
        out.append(DELTA_NOTE)
    if not config.shared_release:
        out.append("binary and K-ary games use separate partitions and releases")
    return out


def run_experiment(
    config: ExperimentConfig,
    out_dir: Optional[Union[str, Path]] = None,
    progress: bool = False,
) -> AuditResult:
    """Run all trials of `config`; see AuditRunner."""
    return AuditRunner(config, progress=progress).run(out_dir)


# ---------------------------------------------------------------------------
# Run directory
# ---------------------------------------------------------------------------

def default_run_dir(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) if config.output_dir else Path(runs_dir()) / config.name


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _clear_run_outputs(root: Path) -> None:
    for sub in ("trials", "regressors"):
        if (root / sub).is_dir():
            shutil.rmtree(root / sub)
    for stale in [*root.glob("sweep_*.csv"), root / "report.txt", root / "MANIFEST"]:
        if stale.is_file():
            stale.unlink()


def write_run_dir(
    result: AuditResult,
    artifacts: Dict[int, TrialArtifacts],
    out_dir: Union[str, Path],
) -> Path:
    """
    Write config.yaml, per-trial JSON and scores, regressor snapshots,
    summary.csv, result.json and a MANIFEST of sha256 hashes.

    Outputs of an earlier run in the same directory are removed first, so
    the MANIFEST and the persisted trials describe this run only.
    """
    from .report import write_csv, write_json

    root = Path(out_dir)
    _clear_run_outputs(root)
    (root / "trials").mkdir(parents=True, exist_ok=True)
    (root / "config.yaml").write_text(dump_config(result.config))

    for record in result.trials:
        stem = f"trial_{record.trial:03d}"
        (root / "trials" / f"{stem}.json").write_text(record.model_dump_json(indent=2))
        trial_artifacts = artifacts.get(record.trial)
        if trial_artifacts is None:
            continue
        with open(root / "trials" / f"{stem}_scores.npz", "wb") as fh:
            np.savez(fh, **trial_artifacts.scores)
        for key, regressor in trial_artifacts.regressors.items():
            save_regressor(regressor, root / "regressors" / f"{stem}_{key}.npz")

    write_csv(result, root / "summary.csv")
    write_json(result, root / "result.json")

    files = sorted(p for p in root.rglob("*") if p.is_file() and p.name != "MANIFEST")
    lines = [f"{_sha256(p)}  {p.relative_to(root).as_posix()}" for p in files]
    (root / "MANIFEST").write_text("\n".join(lines) + "\n")
    logger.info("wrote run directory %s (%d files)", root, len(files))
    return root


def load_trial_scores(run_dir: Union[str, Path], trial: int) -> Dict[str, np.ndarray]:
    path = Path(run_dir) / "trials" / f"trial_{trial:03d}_scores.npz"
    if not path.exists():
        raise InputError(f"missing persisted scores: {path}")
    with np.load(path, allow_pickle=False) as data:
        return {name: data[name] for name in data.files}


def persisted_trials(run_dir: Union[str, Path]) -> List[int]:
    """Trial indices that have a scores file under run_dir/trials."""
    found = Path(run_dir).glob("trials/trial_*_scores.npz")
    return sorted(int(path.name.split("_")[1]) for path in found)


def sweep_from_scores(
    config: ExperimentConfig,
    game: str,
    run_dir: Union[str, Path],
) -> Dict[int, Dict[str, SweepResult]]:
    """
    Re-run one game's budget sweep on persisted scores, without retraining.

    The grid and alpha come from `config`, so a new grid can be tried on an
    existing run. Every trial with persisted scores is swept.

    Returns:
        trial -> method -> SweepResult
    """
    if game not in config.games.enabled:
        raise ConfigurationError(f"game '{game}' is not enabled in this config")
    trials = persisted_trials(run_dir)
    if not trials:
        raise InputError(f"no persisted scores under {run_dir}")
    runner = AuditRunner(config, progress=False)
    out: Dict[int, Dict[str, SweepResult]] = {}
    for trial in trials:
        arrays = load_trial_scores(run_dir, trial)
        truth_suffix = "__S" if game == "binary" else "__u"
        keys = [name[: -len(truth_suffix)] for name in arrays if name.endswith(truth_suffix)]
        if not keys:
            raise InputError(f"trial {trial} has no persisted {game} game state")
        key = keys[0]
        truth = arrays[f"{key}{truth_suffix}"]
        out[trial] = {}
        for method in config.methods:
            name = f"{method}__{key}__Y"
            if name not in arrays:
                raise InputError(f"trial {trial} has no persisted '{method}' scores")
            Y = arrays[name]
            if game == "binary":
                out[trial][method] = eps_sweep(truth, Y, "binary", runner.binary_grid, config.alpha)
            else:
                out[trial][method] = eps_sweep(
                    truth, Y.reshape(len(truth), -1), "kary", runner.kary_grid, config.alpha
                )
    return out
