"""
Empirical epsilon lower bounds.

Turns a guess tally (k guesses, c correct, arity K) into the largest epsilon
that the tally rules out at confidence 1 - alpha. Both games share one bound
family: under eps-DP each guess is correct with probability at most
p(eps, K) = e^eps / (e^eps + K - 1), so c is dominated by Binomial(k, p).
"""

import logging
import math
from typing import List, Literal, Optional, Sequence

import numpy as np
import scipy.stats

from .errors import ConfigurationError, DomainError
from .game import guess_binary, guess_kary, tally_binary, tally_kary
from .schemas import AuditOutcome, EpsLowerBound, SweepPoint, SweepResult


logger = logging.getLogger(__name__)

BRACKET_START = 1.0
BRACKET_CAP = 50.0
TOLERANCE = 1e-4


def binom_tail(k: int, c: int, p: float) -> float:
    """
    P[Binomial(k, p) >= c].

    Args:
        k: Number of trials
        c: Threshold, 0 <= c <= k
        p: Success probability in [0, 1]

    Returns:
        Upper tail probability

    Raises:
        DomainError: If p lies outside [0, 1] or c is outside [0, k]
    """
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    if k < 0 or c > k:
        raise DomainError(f"need 0 <= c <= k, got k={k}, c={c}")
    if c <= 0:
        return 1.0
    return float(scipy.stats.binom.sf(c - 1, k, p))


def success_probability(eps: float, K: int) -> float:
    """Largest per-guess success probability of an eps-DP mechanism in a K-ary game."""
    if K < 1:
        raise DomainError(f"arity must be >= 1, got {K}")
    return 1.0 / (1.0 + (K - 1) * math.exp(-eps))


def _tail(outcome: AuditOutcome, eps: float) -> float:
    return binom_tail(outcome.k, outcome.c, success_probability(eps, outcome.K))


def eps_lower_bound(
    outcome: AuditOutcome,
    method: Literal["or", "or_fdp"] = "or",
) -> EpsLowerBound:
    """
    Bisect for the epsilon at which the tally's tail probability reaches alpha.

    The bracket starts at [0, 1] and doubles its upper end until the tail
    exceeds alpha, stopping at 50. The returned value is the lower end of the
    final bracket, so the tail there is still below alpha.

    Args:
        outcome: Guess tally
        method: Tag recorded on the result ("or" or "or_fdp")

    Returns:
        EpsLowerBound with eps >= 0
    """
    if outcome.k == 0 or outcome.c == 0 or _tail(outcome, 0.0) >= outcome.alpha:
        return EpsLowerBound(eps=0.0, outcome=outcome, method=method)

    lo, hi = 0.0, BRACKET_START
    while _tail(outcome, hi) < outcome.alpha:
        lo = hi
        if hi >= BRACKET_CAP:
            logger.warning(
                "bisection bracket hit the cap at eps=%.1f for k=%d, c=%d, K=%d",
                BRACKET_CAP, outcome.k, outcome.c, outcome.K,
            )
            return EpsLowerBound(eps=BRACKET_CAP, outcome=outcome, method=method)
        hi = min(2.0 * hi, BRACKET_CAP)

    while hi - lo > TOLERANCE:
        mid = 0.5 * (lo + hi)
        if _tail(outcome, mid) < outcome.alpha:
            lo = mid
        else:
            hi = mid

    return EpsLowerBound(eps=lo, outcome=outcome, method=method)


def budget_grid(max_budget: int, step: int = 10, budgets: Optional[Sequence[int]] = None) -> List[int]:
    """
    Guess budgets to sweep: step, 2*step, ... up to max_budget.

    An explicit list is validated against max_budget and returned sorted. When
    max_budget < step the grid is [max_budget].
    """
    if max_budget < 0:
        raise ConfigurationError(f"max_budget must be >= 0, got {max_budget}")
    if budgets is not None:
        grid = sorted(set(int(b) for b in budgets))
        if not grid:
            raise ConfigurationError("budget grid is empty")
        if grid[0] < 0 or grid[-1] > max_budget:
            raise ConfigurationError(f"budgets {grid} fall outside [0, {max_budget}]")
        return grid
    if step < 1:
        raise ConfigurationError(f"step must be >= 1, got {step}")
    grid = list(range(step, max_budget + 1, step))
    return grid or [max_budget]


def eps_sweep(
    truth: np.ndarray,
    Y: np.ndarray,
    game: Literal["binary", "kary"],
    budgets: Sequence[int],
    alpha: float = 0.05,
) -> SweepResult:
    """
    Estimate a bound at every guess budget and keep the best.

    For the binary game each budget is split evenly (k_plus = k_minus =
    budget // 2) and `truth` is S in {-1, +1}^m. For the K-ary game the budget
    is the number of kept guesses, `truth` is the 1-based u and Y is M x K.

    Args:
        truth: True selection (S or u)
        Y: Scores, larger means more likely IN
        game: "binary" or "kary"
        budgets: Nonempty budget grid
        alpha: Significance level for each estimate

    Returns:
        SweepResult with the highest bound (first budget wins ties) and the curve
    """
    if len(budgets) == 0:
        raise ConfigurationError("budget grid is empty")
    Y = np.asarray(Y, dtype=np.float64)
    if not np.all(np.isfinite(Y)):
        raise DomainError("scores must be finite")

    method = "or" if game == "binary" else "or_fdp"
    best: Optional[EpsLowerBound] = None
    curve: List[SweepPoint] = []

    for budget in budgets:
        if game == "binary":
            half = int(budget) // 2
            outcome = tally_binary(truth, guess_binary(Y, half, half), alpha=alpha)
        elif game == "kary":
            outcome = tally_kary(truth, guess_kary(Y, int(budget)), K=Y.shape[1], alpha=alpha)
        else:
            raise ConfigurationError(f"unknown game '{game}'")

        bound = eps_lower_bound(outcome, method=method)
        curve.append(SweepPoint(budget=int(budget), k=outcome.k, c=outcome.c, eps=bound.eps))
        if best is None or bound.eps > best.eps:
            best = bound

    logger.debug("%s sweep over %d budgets: best eps %.4f", game, len(curve), best.eps)
    return SweepResult(best=best, curve=curve)


def eps_max(e_or: EpsLowerBound, e_fdp: EpsLowerBound) -> float:
    """Per-run maximum of the two procedures' bounds."""
    if e_or.method == e_fdp.method:
        raise ConfigurationError(f"eps_max needs one 'or' and one 'or_fdp' bound, got two '{e_or.method}'")
    return max(e_or.eps, e_fdp.eps)
