"""QoE surrogate and the scalar matching reward.

QoE_u = content_u * delivery_u, where content_u is the mean affinity of the
experts assigned to u and delivery_u = min(1, rate_u / r_req). The reward
subtracts weighted energy and compute costs and a violation penalty.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .channel import (ChannelRealization, RateReport, ScenarioRadio,
                      compute_rates, path_gain)
from .errors import ConfigurationError, ContractError
from .matchgraph import MatchingState, StreamPartition, derive_streams, is_feasible

REWARD_COLUMNS = ("total", "qoe_sum", "energy_cost", "compute_cost", "violation_penalty")


@dataclass(frozen=True)
class EconWeights:
    lambda_energy: float = 0.01
    lambda_compute: float = 0.1
    payload_bits: float = 1e6
    bandwidth_hz: float = 10e6
    r_req: float = 0.5

    def __post_init__(self):
        if self.r_req <= 0:
            raise ConfigurationError("r_req must be positive")
        if self.bandwidth_hz <= 0 or self.payload_bits <= 0:
            raise ConfigurationError("bandwidth_hz and payload_bits must be positive")
        if self.lambda_energy < 0 or self.lambda_compute < 0:
            raise ConfigurationError("cost weights must be non-negative")


@dataclass(frozen=True)
class RewardBreakdown:
    total: float
    qoe_sum: float
    energy_cost: float
    compute_cost: float
    violation_penalty: float

    def as_row(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def violation_constant(num_users: int) -> float:
    # QoE is bounded by num_users, so any feasible matching beats any
    # matching with a violated row.
    return 10.0 * num_users


def sample_affinity(rng: np.random.Generator, num_users: int, num_experts: int,
                    spread: float = 0.3, floor: float = 0.2) -> np.ndarray:
    """Affinities from a 2-D style space.

    Users and experts get uniform positions in the unit square; affinity
    decays with distance but never drops below ``floor`` (any expert can
    serve any user, just worse).
    """
    users = rng.random((num_users, 2))
    experts = rng.random((num_experts, 2))
    d2 = ((users[:, None, :] - experts[None, :, :]) ** 2).sum(-1)
    return floor + (1.0 - floor) * np.exp(-d2 / (2.0 * spread ** 2))


def per_user_qoe(m: MatchingState, affinity: np.ndarray, rates: RateReport,
                 r_req: float) -> np.ndarray:
    if not is_feasible(m):
        raise ContractError("QoE is defined for feasible matchings only")
    if r_req <= 0:
        raise ContractError("r_req must be positive")
    a = np.asarray(affinity, dtype=np.float64)
    content = (a * m.assign).sum(axis=1) / m.quota
    delivery = np.minimum(1.0, np.asarray(rates.r_user_total) / r_req)
    return content * delivery


def reward(m: MatchingState, qoe: np.ndarray, part: StreamPartition,
           rates: RateReport, econ: EconWeights, tx_power: float,
           raw_assign: np.ndarray | None = None) -> RewardBreakdown:
    """Scalar reward and its components.

    ``raw_assign`` is the unrepaired graph a matching was projected from;
    when given, each of its rows that misses the quota costs the violation
    constant.
    """
    qoe = np.asarray(qoe, dtype=np.float64)
    qoe_sum = float(qoe.sum())
    compute_cost = float(part.active_experts)
    r = np.asarray(rates.r_user_total, dtype=np.float64)
    pos = r[r > 0]
    energy = 0.0
    if pos.size:
        # transmit duration of the slowest served user, times power
        energy = float(tx_power * econ.payload_bits / (econ.bandwidth_hz * pos.min()))
    violation = 0.0
    if raw_assign is not None:
        bad = int(np.sum(np.asarray(raw_assign).sum(axis=-1) != m.quota))
        violation = bad * violation_constant(m.num_users)
    total = qoe_sum - econ.lambda_energy * energy - econ.lambda_compute * compute_cost - violation
    vals = (total, qoe_sum, energy, compute_cost, violation)
    if not np.all(np.isfinite(vals)):
        raise ContractError(f"non-finite reward components {vals}")
    return RewardBreakdown(*vals)


@dataclass(frozen=True, eq=False)
class MatchingProblem:
    """One scored instance: affinities plus a channel drop."""

    affinity: np.ndarray
    chan: ChannelRealization
    radio: ScenarioRadio
    econ: EconWeights
    quota: int

    @property
    def num_users(self) -> int:
        return self.affinity.shape[0]

    @property
    def num_experts(self) -> int:
        return self.affinity.shape[1]

    def rates(self, m: MatchingState) -> RateReport:
        return compute_rates(self.chan, derive_streams(m), self.radio)

    def evaluate(self, m: MatchingState, raw_assign=None) -> RewardBreakdown:
        part = derive_streams(m)
        rates = compute_rates(self.chan, part, self.radio)
        q = per_user_qoe(m, self.affinity, rates, self.econ.r_req)
        return reward(m, q, part, rates, self.econ, self.chan.tx_power, raw_assign)

    def score(self, m: MatchingState) -> float:
        return self.evaluate(m).total

    def qoe_sum(self, m: MatchingState) -> float:
        return self.evaluate(m).qoe_sum

    def restricted(self, n_rows: int) -> "MatchingProblem":
        """The sub-problem containing only the first ``n_rows`` users."""
        chan = ChannelRealization(self.chan.h[:n_rows], self.chan.distances[:n_rows],
                                  self.chan.noise_power, self.chan.tx_power)
        return MatchingProblem(self.affinity[:n_rows], chan, self.radio, self.econ, self.quota)

    def partial_score(self, assign: np.ndarray, n_rows: int) -> float:
        sub = self.restricted(n_rows)
        return sub.score(MatchingState(assign[:n_rows], self.quota))

    def qoe_upper_bound(self) -> float:
        """QoE with saturated delivery: the best content score per user."""
        top = -np.sort(-self.affinity, axis=1)[:, :self.quota]
        return float(top.mean(axis=1).sum())

    def with_snr(self, snr_db: float) -> "MatchingProblem":
        return MatchingProblem(self.affinity, self.chan.with_snr(self.radio, snr_db),
                               self.radio, self.econ, self.quota)


def receive_snr_db(chan: ChannelRealization) -> np.ndarray:
    """Per-user matched-filter receive SNR in dB."""
    energy = np.sum(np.abs(chan.h) ** 2, axis=1)
    return 10.0 * np.log10(energy * chan.tx_power / chan.noise_power)


def nominal_gain(radio: ScenarioRadio) -> float:
    return float(path_gain(radio.dist_min, radio))
