"""
Tests for the experiment harness, seeding and run directories.

Run with: python test_harness.py  (or pytest)
"""

import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from lib.config import TABLE2_SIZES, get_preset
from lib.errors import AuditError, ConfigurationError
from lib.harness import (
    DELTA_NOTE,
    AuditRunner,
    ReleaseLedger,
    default_run_dir,
    persisted_trials,
    release_hash,
    run_experiment,
    sweep_from_scores,
)
from lib.report import load_result
from lib.schemas import ExperimentConfig
from lib.seeding import ROLES, split_seed, trial_streams


def create_test_config(games=None, trials: int = 2, **overrides) -> ExperimentConfig:
    """Helper for a tiny DP-SGD experiment that runs in seconds."""
    raw = {
        "name": "tiny",
        "mechanism": {
            "kind": "dpsgd",
            "dpsgd": {
                "clip_C": 1.0,
                "noise_multiplier": 0.5,
                "steps": 20,
                "batch_size": 16,
                "lr": 0.5,
                "net": {"input_dim": 4, "hidden_dims": [8], "output_dim": 3},
            },
        },
        "data": {"m": 40, "r": 20, "d": 4, "num_classes": 3, "holdout_size": 60},
        "games": games or {"binary": True, "kary": True, "K": 2},
        "scores": {"methods": ["margin", "loss", "quantile"], "regressor": {"hidden_dims": [8], "epochs": 5}},
        "trials": trials,
        "sweep": {"step": 5},
    }
    raw.update(overrides)
    return ExperimentConfig.model_validate(raw)


def create_test_oracle(kind: str = "rr", value: float = 1.0, m: int = 200, trials: int = 1,
                       **overrides) -> ExperimentConfig:
    """Helper for an oracle experiment."""
    mechanism = {"kind": "rr", "eps_true": value} if kind == "rr" else {"kind": "gaussian", "noise_sigma": value}
    return ExperimentConfig.model_validate({
        "name": f"{kind}-test",
        "mechanism": mechanism,
        "data": {"m": m},
        "trials": trials,
        **overrides,
    })


def test_seeding():
    """Test trial seeds and per-role streams."""
    print("Testing seeding...")

    assert split_seed(0, 0) == split_seed(0, 0), "trial seed should be deterministic"
    assert split_seed(0, 0) != split_seed(0, 1), "trials should get different seeds"
    assert split_seed(0, 0) != split_seed(1, 0), "base seeds should give different trial seeds"
    assert 0 <= split_seed(7, 3) < 2 ** 64, "trial seed should fit in 64 bits"

    streams = trial_streams(5, 2)
    draws = {role: streams.generator(role).random() for role in ROLES}
    assert len(set(draws.values())) == len(ROLES), "roles should draw from independent streams"
    assert streams.generator("pool").random() == draws["pool"], "a role's stream should restart identically"

    try:
        streams.generator("nope")
        assert False, "unknown role should raise"
    except KeyError:
        pass

    print("✓ seeding tests passed!")


def test_release_ledger():
    """Test publish-once and pairing checks."""
    print("Testing ReleaseLedger...")

    ledger = ReleaseLedger()
    release = np.zeros(4)
    digest = ledger.publish("shared", release)
    assert digest == release_hash(np.zeros(4)), "publish should return the release hash"

    try:
        ledger.publish("shared", np.ones(4))
        assert False, "a second publish should raise"
    except AuditError:
        pass

    try:
        ledger.fetch("kary", "margin")
        assert False, "fetching an unknown key should raise"
    except AuditError:
        pass

    seen = ledger.fetch("shared", "margin")
    ledger.assert_paired()
    seen[0] = 1.0
    ledger.fetch("shared", "quantile")
    try:
        ledger.assert_paired()
        assert False, "a modified release should break pairing"
    except AuditError:
        pass

    print("✓ ReleaseLedger tests passed!")


def test_oracle_runs():
    """Test randomized response at eps 0, aggregates and ground truth."""
    print("Testing oracle experiments...")

    result = run_experiment(create_test_oracle("rr", 0.0))
    best = result.trials[0].method("release").eps_max
    assert best < 1.0, f"eps_true = 0 should give a small bound, got {best}"

    result = run_experiment(create_test_oracle("rr", 1.5, trials=3))
    per_trial = [t.method("release").eps_max for t in result.trials]
    assert abs(result.aggregates[0].eps_max - np.mean(per_trial)) < 1e-12, "aggregate should be the trial mean"
    assert result.ground_truth == {"binary": 1.5, "kary": 3.0}, f"unexpected ground truth {result.ground_truth}"
    assert result.reference_curve is None, "randomized response has no reference curve"
    for record in result.trials:
        assert list(record.release_hashes) == ["shared"], "K = 2 should share one release"
        rec = record.method("release")
        assert rec.eps_max == max(rec.eps_or, rec.eps_or_fdp), "eps_max should be the max of both procedures"

    result = run_experiment(create_test_oracle("gaussian", 1.0))
    assert result.ground_truth is None, "the Gaussian oracle has no closed-form ground truth here"
    assert result.reference_curve, "the Gaussian oracle should carry its reference curve"
    assert DELTA_NOTE in result.notes, "Gaussian runs should carry the delta note"

    print("✓ oracle experiment tests passed!")


def test_config_validation():
    """Test invalid sizes and defaults."""
    print("Testing config validation...")

    try:
        create_test_config(data={"n": 999, "m": 40, "r": 20, "d": 4, "num_classes": 3})
        assert False, "n != r + m/2 should fail validation"
    except ValidationError:
        pass

    try:
        create_test_config(data={"m": 42, "r": 20, "d": 4, "num_classes": 3}, games={"K": 4})
        assert False, "m not a multiple of K should fail validation"
    except ValidationError:
        pass

    assert create_test_oracle().methods == ["release"], "oracles should default to release scores"

    config = create_test_config(output_dir="somewhere")
    assert default_run_dir(config) == Path("somewhere"), "output_dir should win"
    previous = os.environ.get("DPAUDIT_RUNS_DIR")
    os.environ["DPAUDIT_RUNS_DIR"] = "elsewhere"
    try:
        assert default_run_dir(create_test_config()) == Path("elsewhere") / "tiny", "runs dir should come from env"
    finally:
        if previous is None:
            os.environ.pop("DPAUDIT_RUNS_DIR")
        else:
            os.environ["DPAUDIT_RUNS_DIR"] = previous

    try:
        get_preset("no-such-preset")
        assert False, "unknown preset should raise"
    except ConfigurationError:
        pass

    print("✓ config validation tests passed!")


def test_dpsgd_run_directory():
    """Test a tiny DP-SGD run end to end: files, manifest and re-sweeps."""
    print("Testing DP-SGD run directory...")

    config = create_test_config()
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp) / "run"
        result = run_experiment(config, out_dir=root)

        for name in ("config.yaml", "summary.csv", "result.json", "MANIFEST",
                     "trials/trial_000.json", "trials/trial_001_scores.npz", "regressors/trial_000_shared.npz"):
            assert (root / name).exists(), f"missing {name}"

        for line in (root / "MANIFEST").read_text().splitlines():
            digest, rel = line.split("  ", 1)
            assert hashlib.sha256((root / rel).read_bytes()).hexdigest() == digest, f"bad hash for {rel}"

        for record in result.trials:
            assert list(record.release_hashes) == ["shared"], "K = 2 should publish one release"
            assert set(record.regressor_nll_trace) == {"shared"}, "one regressor per release"
            trace = record.regressor_nll_trace["shared"]
            assert min(trace) <= trace[0], "regressor should not end worse than it started"

        for game in ("binary", "kary"):
            sweeps = sweep_from_scores(config, game, root)
            assert sorted(sweeps) == [0, 1], "every trial should be re-swept"
            for record in result.trials:
                for method in config.methods:
                    recorded = record.method(method)
                    sweep = recorded.binary_sweep if game == "binary" else recorded.kary_sweep
                    assert sweeps[record.trial][method].best.eps == sweep.best.eps, \
                        f"re-sweep of {method}/{game} should reproduce the recorded bound"

        loaded = load_result(root)
        assert loaded.model_dump() == result.model_dump(), "result.json should load back unchanged"

    print("✓ DP-SGD run directory tests passed!")


def test_separate_releases():
    """Test K = 4, where the two games use separate partitions and releases."""
    print("Testing separate releases for K = 4...")

    config = create_test_config(games={"binary": True, "kary": True, "K": 4}, trials=1)
    assert not config.shared_release, "K = 4 should not share a release"
    record, artifacts = AuditRunner(config, progress=False).run_trial(0)
    assert set(record.release_hashes) == {"binary", "kary"}, "each game should publish its own release"
    assert record.release_hashes["binary"] != record.release_hashes["kary"], "releases should differ"
    assert artifacts.scores["kary__u"].shape == (10,), "40 canaries in sets of 4 should give 10 sets"
    for rec in record.methods:
        assert rec.kary_sweep.best.outcome.K == 4, "kary sweeps should use K = 4"

    print("✓ separate release tests passed!")


def test_determinism():
    """Test byte-identical result.json and summary.csv for one config."""
    print("Testing run determinism...")

    with tempfile.TemporaryDirectory() as tmp:
        a = Path(tmp) / "a"
        b = Path(tmp) / "b"
        run_experiment(create_test_config(), out_dir=a)
        run_experiment(create_test_config(), out_dir=b)
        for name in ("result.json", "summary.csv", "config.yaml"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), f"{name} differs between runs"

        c = Path(tmp) / "c"
        d = Path(tmp) / "d"
        run_experiment(get_preset("table1-desk", trials=1), out_dir=c)
        run_experiment(get_preset("table1-desk", trials=1), out_dir=d)
        assert (c / "summary.csv").read_bytes() == (d / "summary.csv").read_bytes(), \
            "table1-desk summaries should match"

    print("✓ determinism tests passed!")


def test_rerun_into_same_directory():
    """Test that a second run into an existing directory leaves no files from the first."""
    print("Testing a re-run into the same run directory...")

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp) / "run"
        run_experiment(create_test_oracle("rr", 1.0, trials=3), out_dir=root)
        assert persisted_trials(root) == [0, 1, 2], "the first run should persist three trials"
        (root / "sweep_binary.csv").write_text("stale\n")

        config = create_test_oracle("rr", 1.0, trials=1, base_seed=99)
        run_experiment(config, out_dir=root)
        assert persisted_trials(root) == [0], "only the second run's trial should remain"
        assert sorted(sweep_from_scores(config, "binary", root)) == [0], "re-sweeps should see one trial"
        assert not (root / "sweep_binary.csv").exists(), "sweeps of the old scores should be removed"
        manifest = (root / "MANIFEST").read_text()
        assert "trial_001" not in manifest and "trial_002" not in manifest, "MANIFEST should not list old trials"
        for line in manifest.splitlines():
            assert (root / line.split("  ", 1)[1]).exists(), f"MANIFEST lists a missing file: {line}"

        dpsgd_root = Path(tmp) / "dpsgd"
        run_experiment(create_test_config(trials=2), out_dir=dpsgd_root)
        run_experiment(create_test_config(trials=1), out_dir=dpsgd_root)
        snapshots = sorted(p.name for p in (dpsgd_root / "regressors").iterdir())
        assert snapshots == ["trial_000_shared.npz"], f"old regressor snapshots should be removed, got {snapshots}"

    print("✓ re-run tests passed!")


def test_table2_presets():
    """Test the all-canary and half-canary presets across training set sizes."""
    print("Testing table-2 presets...")

    for n, suffix in zip(TABLE2_SIZES, ("", "-n500", "-n1000")):
        r0 = get_preset(f"table2-desk-r0{suffix}")
        assert (r0.data.n, r0.data.m, r0.data.r) == (n, 2 * n, 0), f"r0 preset at n={n} has wrong sizes"
        half = get_preset(f"table2-desk-half{suffix}")
        assert (half.data.n, half.data.m, half.data.r) == (n, n, n // 2), f"half preset at n={n} has wrong sizes"
        assert half.methods == ["margin", "quantile"], "table-2 presets compare margin and quantile"

    hetero = get_preset("heterogeneous-quantile")
    assert hetero.data.feature_dim == hetero.mechanism.dpsgd.net.input_dim, "net input should cover nuisance features"

    print("✓ table-2 preset tests passed!")


def test_quantile_beats_margin_on_heterogeneous_data():
    """Quantile scores should not lose to margins on mixed-difficulty data."""
    print("Testing quantile vs margin on heterogeneous data...")

    result = run_experiment(get_preset("heterogeneous-quantile"))
    means = {row.method: row.eps_max for row in result.aggregates}
    print(f"  mean eps_max: margin {means['margin']:.4f}, quantile {means['quantile']:.4f}")
    assert means["quantile"] >= means["margin"], "quantile should match or beat margin on average"

    print("✓ heterogeneous data test passed!")


def run_all_tests():
    """Run all tests."""
    print("=" * 60)
    print("Running Harness Tests")
    print("=" * 60)

    try:
        test_seeding()
        test_release_ledger()
        test_oracle_runs()
        test_config_validation()
        test_dpsgd_run_directory()
        test_separate_releases()
        test_determinism()
        test_rerun_into_same_directory()
        test_table2_presets()
        test_quantile_beats_margin_on_heterogeneous_data()

        print("\n" + "=" * 60)
        print("✅ ALL TESTS PASSED!")
        print("=" * 60)

    except AssertionError as e:
        print(f"\n❌ TEST FAILED: {e}")
        raise
    except Exception as e:
        print(f"\n❌ ERROR: {e}")
        raise


if __name__ == "__main__":
    run_all_tests()
