"""Deep Q-learning baseline that builds a matching one slot at a time.

An episode visits users in index order and, for each user, fills ``quota``
slots. Each action picks an expert not yet chosen by the current user, so
every finished episode is feasible. Only the final step is rewarded.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, TrainingError
from .gdm import EpochStats
from .matchgraph import MatchingState
from .reward import MatchingProblem
from .scenario import ConditionVector
from .scorer import (OptState, ScorerParams, adam_step, backward, forward,
                     grad_norm, init_params)


@dataclass(frozen=True, eq=False)
class EpisodeState:
    assign: np.ndarray
    user: int
    slot: int
    cond: ConditionVector
    problem: MatchingProblem | None = None

    @property
    def done(self) -> bool:
        return self.user >= self.assign.shape[0]

    def legal_mask(self) -> np.ndarray:
        if self.done:
            return np.zeros(self.assign.shape[1], dtype=bool)
        return self.assign[self.user] == 0


def reset(problem: MatchingProblem | None, cond: ConditionVector) -> EpisodeState:
    assign = np.zeros((cond.num_users, cond.num_experts), dtype=np.int8)
    return EpisodeState(assign, 0, 0, cond, problem)


def step(es: EpisodeState, action: int):
    """Apply one slot assignment; returns (next state, reward, done)."""
    if es.done:
        raise ContractError("episode already finished")
    if not 0 <= action < es.assign.shape[1]:
        raise ContractError(f"expert index {action} out of range")
    if es.assign[es.user, action]:
        raise ContractError(f"user {es.user} already holds expert {action}")
    assign = es.assign.copy()
    assign[es.user, action] = 1
    user, slot = es.user, es.slot + 1
    if slot == es.cond.quota:
        user, slot = user + 1, 0
    nxt = replace(es, assign=assign, user=user, slot=slot)
    if not nxt.done:
        return nxt, 0.0, False
    if es.problem is None:
        raise ContractError("terminal step needs a problem to score")
    r = es.problem.evaluate(MatchingState(assign, es.cond.quota)).total
    return nxt, float(r), True


def feature_length(cond: ConditionVector) -> int:
    return cond.num_users * cond.num_experts + cond.num_users + cond.quota + len(cond)


def features(es: EpisodeState) -> np.ndarray:
    u_hot = np.zeros(es.assign.shape[0])
    s_hot = np.zeros(es.cond.quota)
    if not es.done:
        u_hot[es.user] = 1.0
        s_hot[es.slot] = 1.0
    return np.concatenate([es.assign.ravel().astype(np.float64), u_hot, s_hot, es.cond.features])


def init_qnet(cond: ConditionVector, rng, hidden=(128,)) -> ScorerParams:
    return init_params((feature_length(cond),) + tuple(hidden) + (cond.num_experts,), rng)


def act_epsilon_greedy(p: ScorerParams, es: EpisodeState, epsilon: float,
                       rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError(f"epsilon must lie in [0, 1], got {epsilon}")
    legal = np.flatnonzero(es.legal_mask())
    if legal.size == 0:
        raise ContractError("no legal action")
    # one uniform per call so the RNG stream does not depend on epsilon
    explore = rng.random() < epsilon
    if explore:
        return int(legal[rng.integers(legal.size)])
    q = forward(p, features(es))
    q = np.where(es.legal_mask(), q, -np.inf)
    return int(np.argmax(q))


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions."""

    def __init__(self, capacity: int, feat_dim: int, num_actions: int):
        if capacity < 1:
            raise ContractError("capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, feat_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, feat_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.mask2 = np.zeros((capacity, num_actions), dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, done, mask2) -> None:
        i = self._next
        self.s[i], self.a[i], self.r[i] = s, a, r
        self.s2[i], self.done[i], self.mask2[i] = s2, done, mask2
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, self.size, size=n)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx], self.mask2[idx]


def dqn_train_step(p: ScorerParams, target_p: ScorerParams, buf: ReplayBuffer,
                   opt: OptState, gamma: float, batch: int, rng: np.random.Generator):
    """One Adam step on the mean squared Bellman error; returns (loss, grad norm)."""
    if len(buf) < batch:
        raise ContractError(f"buffer holds {len(buf)} transitions, need {batch}")
    s, a, r, s2, done, mask2 = buf.sample(rng, batch)
    q, cache = forward(p, s, return_cache=True)
    q_next = np.where(mask2, forward(target_p, s2), -np.inf)
    best_next = np.where(done, 0.0, q_next.max(axis=1, initial=-np.inf, where=mask2))
    best_next = np.where(np.isfinite(best_next), best_next, 0.0)
    target = r + gamma * best_next
    rows = np.arange(batch)
    err = q[rows, a] - target
    loss = float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite Bellman loss (max |target| {np.max(np.abs(target))})")
    upstream = np.zeros_like(q)
    upstream[rows, a] = 2.0 * err / batch
    grads = backward(p, s, upstream, cache=cache)
    adam_step(p, grads, opt)
    return loss, grad_norm(grads)


def sync_target(p: ScorerParams) -> ScorerParams:
    return p.copy()


@dataclass(frozen=True)
class DQNSettings:
    hidden: tuple = (128,)
    lr: float = 1e-4
    buffer_capacity: int = 20_000
    batch: int = 32
    gamma: float = 1.0
    target_sync: int = 200
    train_every: int = 1
    eps_start: float = 1.0
    eps_end: float = 0.05
    anneal_fraction: float = 0.5


def epsilon_at(epoch: int, total_epochs: int, s: DQNSettings) -> float:
    span = max(1.0, s.anneal_fraction * total_epochs)
    frac = min(1.0, epoch / span)
    return s.eps_start + (s.eps_end - s.eps_start) * frac


@dataclass(frozen=True)
class DQNEpochStats(EpochStats):
    """Exploring-episode stats plus the greedy policy's reward on the same drop."""

    greedy_reward: float = float("nan")


class DQNTrainer:
    """Owns the online/target networks, optimizer and replay buffer."""

    def __init__(self, cond: ConditionVector, settings: DQNSettings, rng: np.random.Generator):
        self.settings = settings
        self.params = init_qnet(cond, rng, settings.hidden)
        self.target = sync_target(self.params)
        self.opt = OptState.for_params(self.params, lr=settings.lr)
        self.buffer = ReplayBuffer(settings.buffer_capacity, feature_length(cond), cond.num_experts)
        self.updates = 0
        self.env_steps = 0

    def run_episode(self, problem, cond, epsilon, rng, learn=True):
        es = reset(problem, cond)
        feats = features(es)
        norms = []
        while True:
            a = act_epsilon_greedy(self.params, es, epsilon, rng)
            nxt, r, done = step(es, a)
            nfeats = features(nxt)
            if learn:
                self.buffer.add(feats, a, r, nfeats, done, nxt.legal_mask())
                self.env_steps += 1
                if (len(self.buffer) >= self.settings.batch
                        and self.env_steps % self.settings.train_every == 0):
                    _, gn = dqn_train_step(self.params, self.target, self.buffer, self.opt,
                                           self.settings.gamma, self.settings.batch, rng)
                    norms.append(gn)
                    self.updates += 1
                    if self.updates % self.settings.target_sync == 0:
                        self.target = sync_target(self.params)
            es, feats = nxt, nfeats
            if done:
                return MatchingState(es.assign, cond.quota), r, norms

    def train_epoch(self, env, episodes: int, epoch: int, total_epochs: int,
                    rng: np.random.Generator) -> DQNEpochStats:
        """``episodes`` exploring episodes on one fresh drop.

        The greedy policy is scored on the drop before any of this epoch's
        updates, so ``greedy_reward`` is an out-of-sample measurement.
        """
        drop = env.sample_drop(rng)
        greedy = drop.problem.score(self.greedy_matching(drop.problem, drop.cond))
        eps = epsilon_at(epoch, total_epochs, self.settings)
        rewards, qoes, norms = [], [], []
        for _ in range(episodes):
            m, r, gn = self.run_episode(drop.problem, drop.cond, eps, rng)
            rewards.append(r)
            qoes.append(drop.problem.evaluate(m).qoe_sum)
            norms += gn
        return DQNEpochStats(float(np.mean(rewards)), float(np.max(rewards)),
                             float(np.mean(norms)) if norms else 0.0, float(np.mean(qoes)),
                             float(greedy))

    def greedy_matching(self, problem, cond) -> MatchingState:
        es = reset(problem, cond)
        rng = np.random.default_rng(0)  # unused at epsilon 0
        while not es.done:
            es, _, _ = step(es, act_epsilon_greedy(self.params, es, 0.0, rng))
        return MatchingState(es.assign, cond.quota)
