"""Scenario sampling and the condition vector fed to the learned matchers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import COND_LIMIT, ScenarioRadio, path_gain, sample_channel
from .errors import ConfigurationError
from .reward import EconWeights, MatchingProblem, sample_affinity

MAX_RESAMPLE = 100


@dataclass(frozen=True)
class ConditionSpec:
    """Fixed standardization constants for condition features."""

    gain_center: float = -3.0  # dB relative to N * g(dist_min)
    gain_scale: float = 3.0
    snr_center: float = 10.0
    snr_scale: float = 20.0
    affinity_center: float = 0.5
    affinity_scale: float = 0.25


@dataclass(frozen=True, eq=False)
class ConditionVector:
    features: np.ndarray
    num_users: int
    num_experts: int
    quota: int

    def __len__(self):
        return self.features.shape[0]


def condition_length(num_users: int, num_experts: int) -> int:
    return num_users + num_users * num_experts + 1 + num_experts


def build_condition(problem: MatchingProblem, snr_db: float,
                    spec: ConditionSpec = ConditionSpec()) -> ConditionVector:
    """[channel gains | affinities | snr | quota one-hot], standardized."""
    radio = problem.radio
    ref = radio.num_antennas * path_gain(radio.dist_min, radio)
    energy = np.sum(np.abs(problem.chan.h) ** 2, axis=1)
    gain_db = 10.0 * np.log10(np.maximum(energy / ref, 1e-30))
    quota_hot = np.zeros(problem.num_experts)
    quota_hot[problem.quota - 1] = 1.0
    feats = np.concatenate([
        (gain_db - spec.gain_center) / spec.gain_scale,
        ((problem.affinity - spec.affinity_center) / spec.affinity_scale).ravel(),
        [(snr_db - spec.snr_center) / spec.snr_scale],
        quota_hot,
    ])
    feats.setflags(write=False)
    return ConditionVector(feats, problem.num_users, problem.num_experts, problem.quota)


@dataclass(frozen=True, eq=False)
class Drop:
    problem: MatchingProblem
    cond: ConditionVector
    snr_db: float


@dataclass(frozen=True, eq=False)
class Scenario:
    """Fixed user population (affinities) with fresh channel drops."""

    affinity: np.ndarray
    radio: ScenarioRadio
    econ: EconWeights
    quota: int
    snr_choices: tuple
    cond_spec: ConditionSpec = ConditionSpec()

    def __post_init__(self):
        if not self.snr_choices:
            raise ConfigurationError("at least one SNR value is required")

    @property
    def num_users(self) -> int:
        return self.affinity.shape[0]

    @property
    def num_experts(self) -> int:
        return self.affinity.shape[1]

    @classmethod
    def sampled(cls, rng, num_users, num_experts, quota, radio, econ, snr_choices,
                cond_spec=ConditionSpec(), spread=0.3, floor=0.2):
        a = sample_affinity(rng, num_users, num_experts, spread, floor)
        a.setflags(write=False)
        return cls(a, radio, econ, quota, tuple(float(s) for s in snr_choices), cond_spec)

    def drop_at(self, rng: np.random.Generator, snr_db: float) -> Drop:
        radio = self.radio
        for _ in range(MAX_RESAMPLE):
            chan = sample_channel(rng, radio, self.num_users)
            # removing rows never worsens conditioning of a wide matrix, so a
            # well-conditioned full channel makes every ZF subset safe
            if self.num_users > radio.num_antennas or np.linalg.cond(chan.h) <= COND_LIMIT:
                break
        chan = chan.with_snr(radio, snr_db)
        problem = MatchingProblem(self.affinity, chan, radio, self.econ, self.quota)
        return Drop(problem, build_condition(problem, snr_db, self.cond_spec), snr_db)

    def at_snr(self, drop: Drop, snr_db: float) -> Drop:
        """Same fading and distances, different transmit SNR."""
        problem = drop.problem.with_snr(snr_db)
        return Drop(problem, build_condition(problem, snr_db, self.cond_spec), snr_db)

    def sample_drop(self, rng: np.random.Generator) -> Drop:
        if len(self.snr_choices) == 1:
            snr = self.snr_choices[0]
        else:
            snr = float(self.snr_choices[rng.integers(len(self.snr_choices))])
        return self.drop_at(rng, snr)


@dataclass(frozen=True, eq=False)
class FixedDrop:
    """Always hands back the same drop; consumes no randomness."""

    drop: Drop

    @property
    def num_users(self) -> int:
        return self.drop.problem.num_users

    @property
    def num_experts(self) -> int:
        return self.drop.problem.num_experts

    @property
    def quota(self) -> int:
        return self.drop.problem.quota

    def sample_drop(self, rng=None) -> Drop:
        return self.drop
