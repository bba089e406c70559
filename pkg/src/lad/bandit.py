"""Single-context N-armed bandit with a fixed advantage table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distribution import (
    AdvantageSpec,
    Windows,
    advantage_distribution,
    advantage_table,
    probvec,
    temperature_sample,
)
from .objectives import Batch


@dataclass(frozen=True)
class BanditEnv:
    spec: AdvantageSpec
    adv_table: np.ndarray
    target: np.ndarray

    @property
    def arms(self) -> int:
        return self.spec.arms

    @property
    def windows(self) -> Windows:
        return Windows.from_spec(self.spec)


def make_env(spec: AdvantageSpec) -> BanditEnv:
    table = advantage_table(spec)
    table.setflags(write=False)
    target = advantage_distribution(table, spec.eta)
    target.setflags(write=False)
    return BanditEnv(spec, table, target)


def collect_batch(env: BanditEnv, behavior, temperature: float, group_size: int, rng_seed) -> Batch:
    """Sample ``group_size`` arms from the tempered behavior policy."""
    behavior = probvec(behavior)
    idx = temperature_sample(behavior, temperature, group_size, rng_seed)
    return Batch(idx, behavior, env.adv_table[idx])
