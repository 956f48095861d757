"""
Tests for the epsilon lower-bound estimator.

Run with: python test_estimator.py  (or pytest)
"""

import math
from fractions import Fraction

import numpy as np
import scipy.stats

from lib.errors import ConfigurationError, DomainError
from lib.estimator import (
    BRACKET_CAP,
    binom_tail,
    budget_grid,
    eps_lower_bound,
    eps_max,
    eps_sweep,
    success_probability,
)
from lib.game import (
    binary_from_pairs,
    guess_binary,
    partition_binary,
    partition_kary,
    set_scores,
    tally_binary,
)
from lib.mechanisms import rr_release
from lib.schemas import AuditOutcome, EpsLowerBound


def create_test_outcome(k: int, c: int, K: int = 2, alpha: float = 0.05) -> AuditOutcome:
    """Helper to create an outcome."""
    return AuditOutcome(k=k, c=c, K=K, alpha=alpha)


def exact_tail(k: int, c: int, p: float) -> float:
    """P[Binomial(k, p) >= c] by exact rational summation."""
    q = Fraction(p)
    return float(sum(math.comb(k, j) * q ** j * (1 - q) ** (k - j) for j in range(c, k + 1)))


def exact_eps(k: int, c: int, K: int, alpha: float) -> float:
    """Reference bisection on the exact tail, to 1e-6."""
    def tail(eps):
        return exact_tail(k, c, math.exp(eps) / (math.exp(eps) + K - 1))

    if tail(0.0) >= alpha:
        return 0.0
    lo, hi = 0.0, 1.0
    while tail(hi) < alpha:
        lo, hi = hi, 2 * hi
    while hi - lo > 1e-6:
        mid = (lo + hi) / 2
        if tail(mid) < alpha:
            lo = mid
        else:
            hi = mid
    return lo


def test_binom_tail():
    """Test tail values, edge cases and the complement identity."""
    print("Testing binom_tail...")

    assert abs(binom_tail(2, 1, 0.5) - 0.75) < 1e-12, "k=2, c=1, p=0.5 should be 0.75"
    assert binom_tail(7, 0, 0.3) == 1.0, "c = 0 should give 1"
    assert abs(binom_tail(4, 4, 0.3) - 0.0081) < 1e-12, "k=4, c=4, p=0.3 should be 0.0081"

    for p in (-0.1, 1.1):
        try:
            binom_tail(5, 2, p)
            assert False, "p outside [0, 1] should raise"
        except DomainError:
            pass

    rng = np.random.default_rng(0)
    for _ in range(50):
        k = int(rng.integers(1, 200))
        c = int(rng.integers(0, k + 1))
        p = float(rng.uniform())
        upper = binom_tail(k, c, p)
        assert abs(upper - exact_tail(k, c, p)) < 1e-12, "tail differs from exact summation"
        lower = float(scipy.stats.binom.cdf(c - 1, k, p)) if c > 0 else 0.0
        assert abs(upper + lower - 1.0) < 1e-10, "tail and complement should sum to 1"

    print("✓ binom_tail tests passed!")


def test_success_probability():
    """Test p(eps, K) identities."""
    print("Testing success_probability...")

    for K in (2, 3, 10, 100):
        assert success_probability(0.0, K) == 1.0 / K, f"p(0, {K}) should be exactly 1/{K}"
    for eps in (0.1, 1.0, 3.0):
        sigmoid = math.exp(eps) / (math.exp(eps) + 1.0)
        assert abs(success_probability(eps, 2) - sigmoid) < 1e-15, "p(eps, 2) should be the sigmoid"

    print("✓ success_probability tests passed!")


def test_golden_values():
    """Test closed-form and reference bounds."""
    print("Testing eps_lower_bound golden values...")

    bound = eps_lower_bound(create_test_outcome(10, 10))
    p = 0.05 ** 0.1
    assert abs(bound.eps - math.log(p / (1 - p))) < 1e-3, f"k=c=10 should give 1.0519, got {bound.eps}"
    assert abs(bound.eps - 1.0519) < 1e-3, "k=c=10 golden value"

    bound = eps_lower_bound(create_test_outcome(1, 1, K=100))
    assert abs(bound.eps - math.log(0.05 * 99 / 0.95)) < 1e-3, f"K=100 should give 1.6507, got {bound.eps}"
    assert abs(bound.eps - 1.6507) < 1e-3, "K=100 golden value"

    assert eps_lower_bound(create_test_outcome(100, 50)).eps == 0.0, "chance-level tally should give 0"
    assert eps_lower_bound(create_test_outcome(0, 0)).eps == 0.0, "no guesses should give 0"

    reference = exact_eps(100, 90, 2, 0.05)
    bound = eps_lower_bound(create_test_outcome(100, 90))
    assert abs(bound.eps - reference) < 1e-3, f"k=100, c=90: {bound.eps} vs reference {reference}"
    print(f"  k=100, c=90 -> eps {bound.eps:.4f} (reference {reference:.4f})")

    print("✓ golden value tests passed!")


def test_bound_monotonicity():
    """Test that the bound grows with evidence and with alpha."""
    print("Testing eps_lower_bound monotonicity...")

    for K in (2, 5):
        values = [eps_lower_bound(create_test_outcome(60, c, K=K)).eps for c in range(61)]
        assert all(a <= b + 1e-4 for a, b in zip(values, values[1:])), "bound should be nondecreasing in c"

    values = [eps_lower_bound(create_test_outcome(80, 70, alpha=a)).eps for a in (0.01, 0.05, 0.1, 0.2)]
    assert all(a <= b + 1e-4 for a, b in zip(values, values[1:])), "bound should be nondecreasing in alpha"

    capped = eps_lower_bound(create_test_outcome(1, 1, K=10 ** 25))
    assert capped.eps == BRACKET_CAP, "an unreachable root should stop at the bracket cap"

    print("✓ monotonicity tests passed!")


def test_eps_sweep():
    """Test sweep examples and budget grids."""
    print("Testing eps_sweep...")

    assert budget_grid(35) == [10, 20, 30], "grid should step by 10 up to max"
    assert budget_grid(7) == [7], "max below step should give [max]"
    assert budget_grid(100, budgets=[40, 20]) == [20, 40], "explicit budgets should be sorted"
    try:
        budget_grid(10, budgets=[20])
        assert False, "budget over max should raise"
    except ConfigurationError:
        pass

    state, _ = partition_binary(np.arange(200), np.arange(0), np.random.default_rng(0))
    Y = state.S + 0.01 * np.arange(200)
    grid = budget_grid(200)
    result = eps_sweep(state.S, Y, "binary", grid)
    assert result.best.outcome.k == 200, "perfect separation should peak at the largest budget"
    assert len(result.curve) == len(grid), "curve should have one point per budget"
    assert result.best.method == "or", "binary sweeps are tagged 'or'"

    rng = np.random.default_rng(1)
    Y = rng.normal(size=200)
    single = eps_sweep(state.S, Y, "binary", [60])
    direct = eps_lower_bound(tally_binary(state.S, guess_binary(Y, 30, 30)))
    assert single.best.eps == direct.eps, "single-budget sweep should equal the direct bound"

    u = rng.integers(1, 4, size=30)
    Yk = rng.normal(size=(30, 3))
    kary = eps_sweep(u, Yk, "kary", budget_grid(30))
    assert kary.best.method == "or_fdp" and kary.best.outcome.K == 3, "kary sweep should use arity K"

    print("✓ eps_sweep tests passed!")


def test_null_sweep():
    """Test that scores independent of membership give small bounds."""
    print("Testing null-distribution sweeps...")

    m = 1000
    grid = budget_grid(m)
    rng = np.random.default_rng(2)
    best = []
    for _ in range(100):
        state, _ = partition_binary(np.arange(m), np.arange(0), rng)
        best.append(eps_sweep(state.S, rng.normal(size=m), "binary", grid).best.eps)
    median = float(np.median(best))
    print(f"  null median best eps {median:.4f}, mean {np.mean(best):.4f}")
    assert median <= 0.2, f"null median best eps {median} should be <= 0.2"

    # Both games on one K = 2 partition, as in a shared-release trial.
    binary_grid, kary_grid = budget_grid(m), budget_grid(m // 2)
    combined = []
    for _ in range(100):
        state, _ = partition_kary(np.arange(m), np.arange(0), 2, rng)
        Y = rng.normal(size=m)
        binary = eps_sweep(binary_from_pairs(state).S, Y, "binary", binary_grid)
        kary = eps_sweep(state.u, set_scores(Y, state), "kary", kary_grid)
        combined.append(eps_max(binary.best, kary.best))
    median = float(np.median(combined))
    print(f"  null median eps_max {median:.4f}")
    assert median <= 0.2, f"null median eps_max {median} should be <= 0.2"


    print("✓ null sweep tests passed!")


def test_randomized_response_soundness():
    """Test the bound against randomized response's exact epsilon."""
    print("Testing soundness against randomized response...")

    m = 2000
    rng = np.random.default_rng(3)
    for eps_true in (0.5, 1.0, 2.0):
        exceed = 0
        for _ in range(200):
            state, _ = partition_binary(np.arange(m), np.arange(0), rng)
            Y = rr_release(state.S, eps_true, rng).astype(float)
            T = guess_binary(Y, m // 2, m // 2)
            if eps_lower_bound(tally_binary(state.S, T)).eps > eps_true:
                exceed += 1
        print(f"  eps_true {eps_true}: {exceed}/200 bounds above the truth")
        assert exceed <= 20, f"eps_true {eps_true}: {exceed} of 200 bounds exceed the truth"

    print("✓ soundness tests passed!")


def test_randomized_response_power():
    """Test that the mean best bound increases with eps_true."""
    print("Testing power against randomized response...")

    m = 1000
    grid = budget_grid(m, step=50)
    rng = np.random.default_rng(4)
    means = []
    for eps_true in (0.5, 1.0, 2.0, 4.0):
        best = []
        for _ in range(20):
            state, _ = partition_binary(np.arange(m), np.arange(0), rng)
            Y = rr_release(state.S, eps_true, rng).astype(float)
            best.append(eps_sweep(state.S, Y, "binary", grid).best.eps)
        means.append(float(np.mean(best)))
    print(f"  mean best eps: {[round(v, 3) for v in means]}")
    assert all(a < b for a, b in zip(means, means[1:])), f"means {means} should strictly increase"

    print("✓ power tests passed!")


def test_eps_max():
    """Test the per-run maximum."""
    print("Testing eps_max...")

    outcome = create_test_outcome(10, 5)

    def bound(eps, method):
        return EpsLowerBound(eps=eps, outcome=outcome, method=method)

    assert eps_max(bound(0.2, "or"), bound(0.1, "or_fdp")) == 0.2, "(0.2, 0.1) should give 0.2"
    assert eps_max(bound(0.0, "or"), bound(0.0, "or_fdp")) == 0.0, "(0, 0) should give 0"

    rng = np.random.default_rng(5)
    for _ in range(100):
        a, b = rng.uniform(0, 5, size=2)
        assert eps_max(bound(a, "or"), bound(b, "or_fdp")) == max(a, b), "eps_max should be the max"

    try:
        eps_max(bound(0.1, "or"), bound(0.2, "or"))
        assert False, "equal tags should raise"
    except ConfigurationError:
        pass

    print("✓ eps_max tests passed!")


def run_all_tests():
    """Run all tests."""
    print("=" * 60)
    print("Running Estimator Tests")
    print("=" * 60)

    try:
        test_binom_tail()
        test_success_probability()
        test_golden_values()
        test_bound_monotonicity()
        test_eps_sweep()
        test_null_sweep()
        test_randomized_response_soundness()
        test_randomized_response_power()
        test_eps_max()

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
