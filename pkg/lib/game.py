"""
Canary guessing games.

The binary membership game assigns half the canaries to the training set and
asks for +1 / -1 / abstain guesses. The K-ary reconstruction game groups
canaries into sets of K, trains on one uniformly chosen member per set and
asks which member it was. Larger scores always mean "more likely IN".
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .errors import ConfigurationError, InputError
from .schemas import AuditOutcome


ABSTAIN = 0


@dataclass(frozen=True)
class BinaryGameState:
    """True selection S over the canaries plus the non-auditing pool."""

    S: np.ndarray                 # (m,) in {-1, +1}
    canary_indices: np.ndarray    # (m,) dataset indices
    non_canary_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    k_plus: int = 0
    k_minus: int = 0

    def __post_init__(self):
        if self.m % 2 != 0:
            raise ConfigurationError(f"binary game needs an even canary count, got {self.m}")
        if int(np.sum(self.S == 1)) != self.m // 2:
            raise ConfigurationError("exactly half of S must be +1")
        if self.k_plus + self.k_minus > self.m:
            raise ConfigurationError("k_plus + k_minus exceeds m")

    @property
    def m(self) -> int:
        return int(self.S.shape[0])

    @property
    def r(self) -> int:
        return int(self.non_canary_indices.shape[0])

    @property
    def n(self) -> int:
        return self.r + self.m // 2

    @property
    def in_indices(self) -> np.ndarray:
        return np.concatenate([self.canary_indices[self.S == 1], self.non_canary_indices])


@dataclass(frozen=True)
class KaryGameState:
    """Canary sets (M x K dataset indices) and the true 1-based choices u."""

    canary_sets: np.ndarray       # (M, K)
    u: np.ndarray                 # (M,) in 1..K
    non_canary_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    k: int = 0

    def __post_init__(self):
        if self.canary_sets.shape[0] != self.u.shape[0]:
            raise ConfigurationError("u must have one entry per canary set")
        if self.u.size and (self.u.min() < 1 or self.u.max() > self.K):
            raise ConfigurationError(f"u entries must lie in 1..{self.K}")
        if self.k > self.M:
            raise ConfigurationError(f"guess budget {self.k} exceeds M={self.M}")

    @property
    def M(self) -> int:
        return int(self.canary_sets.shape[0])

    @property
    def K(self) -> int:
        return int(self.canary_sets.shape[1])

    @property
    def chosen(self) -> np.ndarray:
        return self.canary_sets[np.arange(self.M), self.u - 1]

    @property
    def in_indices(self) -> np.ndarray:
        return np.concatenate([self.chosen, self.non_canary_indices])

    def membership(self) -> np.ndarray:
        """+1 for the chosen member of each set, -1 for the others; shape (M, K)."""
        S = -np.ones(self.canary_sets.shape, dtype=np.int64)
        S[np.arange(self.M), self.u - 1] = 1
        return S


def partition_binary(
    canaries: np.ndarray,
    non_canaries: np.ndarray,
    rng: np.random.Generator,
) -> Tuple[BinaryGameState, np.ndarray]:
    """
    Assign S_i = +1 to a uniformly random half of the canaries.

    Args:
        canaries: m dataset indices (m even)
        non_canaries: r dataset indices, all trained on
        rng: Seeded generator

    Returns:
        (BinaryGameState, IN indices); the IN set has r + m/2 entries

    Raises:
        ConfigurationError: If m is odd
    """
    canaries = np.asarray(canaries, dtype=np.int64)
    non_canaries = np.asarray(non_canaries, dtype=np.int64)
    m = canaries.shape[0]
    if m % 2 != 0:
        raise ConfigurationError(f"binary game needs an even canary count, got {m}")

    S = -np.ones(m, dtype=np.int64)
    S[rng.permutation(m)[: m // 2]] = 1
    state = BinaryGameState(S=S, canary_indices=canaries, non_canary_indices=non_canaries)
    return state, state.in_indices


def select_kary(M: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """u uniform over [1..K]^M."""
    if M < 1 or K < 1:
        raise ConfigurationError(f"M and K must be >= 1, got M={M}, K={K}")
    return rng.integers(1, K + 1, size=M)


def partition_kary(
    canaries: np.ndarray,
    non_canaries: np.ndarray,
    K: int,
    rng: np.random.Generator,
) -> Tuple[KaryGameState, np.ndarray]:
    """
    Group canaries row-wise into M = m/K sets and choose one member per set.

    Returns:
        (KaryGameState, IN indices); the IN set has r + m/K entries
    """
    canaries = np.asarray(canaries, dtype=np.int64)
    non_canaries = np.asarray(non_canaries, dtype=np.int64)
    if K < 1 or canaries.shape[0] % K != 0:
        raise ConfigurationError(f"m={canaries.shape[0]} is not a multiple of K={K}")
    sets = canaries.reshape(-1, K)
    u = select_kary(sets.shape[0], K, rng)
    state = KaryGameState(canary_sets=sets, u=u, non_canary_indices=non_canaries)
    return state, state.in_indices


def binary_from_pairs(state: KaryGameState) -> BinaryGameState:
    """Binary game view of a K = 2 reconstruction partition."""
    if state.K != 2:
        raise ConfigurationError(f"binary view needs K = 2, got K={state.K}")
    return BinaryGameState(
        S=state.membership().ravel(),
        canary_indices=state.canary_sets.ravel(),
        non_canary_indices=state.non_canary_indices,
    )


def guess_binary(Y: np.ndarray, k_plus: int, k_minus: int) -> np.ndarray:
    """
    Exact maximizer of sum_i T_i * Y_i under the two budget constraints.

    +1 goes to the k_plus highest scores and -1 to the k_minus lowest of the
    rest. Ties go to the lower index.

    Raises:
        ConfigurationError: If the budgets exceed m or are negative
    """
    Y = np.asarray(Y, dtype=np.float64)
    m = Y.shape[0]
    if k_plus < 0 or k_minus < 0 or k_plus + k_minus > m:
        raise ConfigurationError(f"budgets k_plus={k_plus}, k_minus={k_minus} invalid for m={m}")

    T = np.zeros(m, dtype=np.int64)
    if k_plus:
        T[np.argsort(-Y, kind="stable")[:k_plus]] = 1
    if k_minus:
        ascending = np.argsort(Y, kind="stable")
        free = ascending[T[ascending] == 0]
        T[free[:k_minus]] = -1
    return T


def guess_kary(Y: np.ndarray, k: int) -> np.ndarray:
    """
    Argmax guess per set, kept for the k sets with the largest top-two margin.

    Returns 1-based guesses with ABSTAIN (0) for the remaining sets. With K = 1
    every margin is 0 and the first k sets guess 1.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise InputError(f"K-ary scores must be an M x K matrix, got shape {Y.shape}")
    M, K = Y.shape
    if k < 0 or k > M:
        raise ConfigurationError(f"guess budget {k} invalid for M={M}")

    guesses = np.argmax(Y, axis=1) + 1
    if K == 1:
        margins = np.zeros(M)
    else:
        top_two = -np.sort(-Y, axis=1)[:, :2]
        margins = top_two[:, 0] - top_two[:, 1]

    v = np.full(M, ABSTAIN, dtype=np.int64)
    keep = np.argsort(-margins, kind="stable")[:k]
    v[keep] = guesses[keep]
    return v


def tally_binary(S: np.ndarray, T: np.ndarray, alpha: float = 0.05) -> AuditOutcome:
    """k = sum |T_i|, c = #{i : T_i = S_i != 0}."""
    S = np.asarray(S)
    T = np.asarray(T)
    k = int(np.abs(T).sum())
    c = int(np.sum((T != 0) & (T == S)))
    return AuditOutcome(k=k, c=c, K=2, alpha=alpha)


def tally_kary(u: np.ndarray, v: np.ndarray, K: int, alpha: float = 0.05) -> AuditOutcome:
    """k = #non-abstain, c = #{i : v_i = u_i}."""
    u = np.asarray(u)
    v = np.asarray(v)
    k = int(np.sum(v != ABSTAIN))
    c = int(np.sum((v != ABSTAIN) & (v == u)))
    return AuditOutcome(k=k, c=c, K=K, alpha=alpha)


def set_scores(scores: np.ndarray, state: KaryGameState) -> np.ndarray:
    """
    Arrange per-canary scores into the M x K matrix of the reconstruction game.

    `scores` must follow the row-major order of state.canary_sets, which is
    the canary order partition_kary was given.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[0] != state.M * state.K:
        raise InputError(f"{scores.shape[0]} scores for {state.M} sets of {state.K}")
    return scores.reshape(state.M, state.K)
