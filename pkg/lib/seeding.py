"""
Seed derivation for reproducible trials.

A trial seed is the first 8 bytes (little endian) of
blake2b(f"{base_seed}:{trial}"). Each role inside a trial then draws from
its own numpy SeedSequence child, keyed by the role's position in ROLES, so
adding draws to one role never shifts another.
"""

import hashlib
from dataclasses import dataclass

import numpy as np


ROLES = (
    "data",
    "pool",
    "partition_binary",
    "partition_kary",
    "mechanism_binary",
    "mechanism_kary",
    "regressor",
)


def split_seed(base_seed: int, trial: int) -> int:
    """64-bit seed for a trial, derived from the base seed and trial index."""
    digest = hashlib.blake2b(f"{base_seed}:{trial}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class TrialStreams:
    """Independent generators for the roles of one trial."""

    seed: int

    def generator(self, role: str) -> np.random.Generator:
        if role not in ROLES:
            raise KeyError(f"unknown stream role '{role}'")
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(ROLES.index(role),))
        return np.random.default_rng(seq)


def trial_streams(base_seed: int, trial: int) -> TrialStreams:
    return TrialStreams(seed=split_seed(base_seed, trial))
