"""Discrete diffusion over matching graphs, trained with policy gradients.

Forward process: every edge is kept with probability alpha_bar_t and
otherwise resampled uniformly from {0, 1}. The reverse process runs a
conditioned denoiser that predicts the clean edge value; the next state is
drawn from the exact categorical posterior q(x_{t-1} | x_t, x_0) averaged
over that prediction. Each reverse step is an MDP action, so the sampled
trajectory's log-probability gives a REINFORCE estimate of the gradient of
the expected terminal reward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, TrainingError
from .matchgraph import MatchingState, one_hot_encode, project_topk
from .reward import RewardBreakdown
from .scenario import ConditionVector
from .scorer import (OptState, ScorerParams, adam_step, backward, forward,
                     grad_norm, init_params)

TERMINAL_KEEP = 0.05
TIME_FEATURES = 3


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray
    # alpha_bars[t] for t = 0..T, alpha_bars[0] = 1
    alpha_bars: np.ndarray

    @property
    def num_steps(self) -> int:
        return self.betas.shape[0]

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[t])


def _solve_scale(base: np.ndarray, target: float) -> float:
    # largest admissible scale keeps every beta below 1
    lo, hi = 1.0, (1.0 - 1e-9) / base.max()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.prod(1.0 - mid * base) > target:
            lo = mid
        else:
            hi = mid
    return hi


def build_schedule(num_steps: int, kind: str = "linear", beta_start: float = 0.15,
                   beta_end: float = 0.6, terminal_keep: float = TERMINAL_KEEP) -> NoiseSchedule:
    """Linear beta ramp, stretched when needed so alpha_bar_T <= terminal_keep."""
    if num_steps < 1:
        raise ConfigurationError("a noise schedule needs at least one step")
    if kind != "linear":
        raise ConfigurationError(f"unknown schedule kind {kind!r}")
    betas = np.linspace(beta_start, beta_end, num_steps)
    if np.prod(1.0 - betas) > terminal_keep:
        betas = betas * _solve_scale(betas, terminal_keep)
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    betas.setflags(write=False)
    alpha_bars.setflags(write=False)
    return NoiseSchedule(betas, alpha_bars)


def forward_noise(m0: MatchingState | np.ndarray, t: int, sched: NoiseSchedule,
                  rng: np.random.Generator) -> np.ndarray:
    """Sample x_t ~ q(x_t | x_0) and return it one-hot encoded.

    t = 0 returns the clean graph.
    """
    if not 0 <= t <= sched.num_steps:
        raise ContractError(f"step {t} outside 0..{sched.num_steps}")
    a = m0.assign if isinstance(m0, MatchingState) else np.asarray(m0)
    keep = rng.random(a.shape) < sched.alpha_bar(t)
    fresh = rng.integers(0, 2, size=a.shape)
    return one_hot_encode(np.where(keep, a, fresh).astype(np.int8))


def time_features(t: int, num_steps: int) -> np.ndarray:
    x = t / num_steps
    return np.array([x, np.sin(np.pi * x), np.cos(np.pi * x)])


def denoiser_dims(num_users: int, num_experts: int, cond_len: int,
                  hidden: tuple = (128,)) -> tuple:
    n_edges = num_users * num_experts
    return (n_edges + TIME_FEATURES + cond_len,) + tuple(hidden) + (2 * n_edges,)


def init_denoiser(cond: ConditionVector, rng: np.random.Generator,
                  hidden: tuple = (128,)) -> ScorerParams:
    return init_params(denoiser_dims(cond.num_users, cond.num_experts, len(cond), hidden), rng)


def _edge_bits(g) -> np.ndarray:
    """Binary edge values from a one-hot graph or a 0/1 array."""
    g = np.asarray(g)
    if g.ndim >= 3 and g.shape[-1] == 2:
        return (g[..., 1] > g[..., 0]).astype(np.int8)
    return g.astype(np.int8)


def _features(x_t: np.ndarray, t: int, num_steps: int, cond: ConditionVector) -> np.ndarray:
    """Batch input rows: [+-1 edge signs | time | condition]."""
    b = x_t.shape[0]
    edges = 2.0 * x_t.reshape(b, -1) - 1.0
    rest = np.concatenate([time_features(t, num_steps), cond.features])
    return np.hstack([edges, np.broadcast_to(rest, (b, rest.shape[0]))])


def _logits_batch(p: ScorerParams, x_t, t, sched, cond, return_cache=False):
    feats = _features(x_t, t, sched.num_steps, cond)
    if feats.shape[1] != p.layer_dims[0]:
        raise ContractError(f"denoiser expects {p.layer_dims[0]} inputs, got {feats.shape[1]}")
    out, cache = forward(p, feats, return_cache=True)
    logits = out.reshape(x_t.shape + (2,))
    if return_cache:
        return logits, feats, cache
    return logits


def denoiser_logits(p: ScorerParams, g, t: int, cond: ConditionVector,
                    sched: NoiseSchedule) -> np.ndarray:
    """Per-edge 2-way logits for the clean graph, shape (U, E, 2)."""
    x_t = _edge_bits(g)
    if x_t.shape != (cond.num_users, cond.num_experts):
        raise ContractError(f"graph shape {x_t.shape} does not match the condition")
    return _logits_batch(p, x_t[None], t, sched, cond)[0]


def _posterior_coeffs(x_t: np.ndarray, t: int, sched: NoiseSchedule):
    """(A, B) = P(x_{t-1} = 1 | x_t, x_0 = 1) and (..., x_0 = 0), t >= 2."""
    beta = sched.beta(t)
    ab = sched.alpha_bar(t - 1)
    # Q_t[k, x_t]: probability of moving from x_{t-1}=k to the observed x_t
    to_obs_from1 = np.where(x_t == 1, 1.0 - beta / 2.0, beta / 2.0)
    to_obs_from0 = np.where(x_t == 0, 1.0 - beta / 2.0, beta / 2.0)
    same = ab + (1.0 - ab) / 2.0
    diff = (1.0 - ab) / 2.0
    A = to_obs_from1 * same / (to_obs_from1 * same + to_obs_from0 * diff)
    B = to_obs_from1 * diff / (to_obs_from1 * diff + to_obs_from0 * same)
    return A, B


def _log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=-1, keepdims=True)
    return z - zmax - np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))


def transition_probs(logits: np.ndarray, x_t: np.ndarray, t: int,
                     sched: NoiseSchedule) -> np.ndarray:
    """P(x_{t-1} = 1 | x_t) per edge."""
    p1 = np.exp(_log_softmax(logits)[..., 1])
    if t == 1:
        return p1
    A, B = _posterior_coeffs(x_t, t, sched)
    return B + p1 * (A - B)


def step_log_prob(logits: np.ndarray, x_t: np.ndarray, x_prev: np.ndarray, t: int,
                  sched: NoiseSchedule, with_grad: bool = False):
    """Log-probability of moving x_t -> x_prev, summed over edges.

    Works on batched (B, U, E) inputs, returning a (B,) array; the gradient
    w.r.t. the logits is returned too when ``with_grad``.
    """
    logp_edge = _log_softmax(logits)
    s = x_prev.astype(bool)
    if t == 1:
        lp = np.where(s, logp_edge[..., 1], logp_edge[..., 0])
        total = lp.reshape(lp.shape[0], -1).sum(axis=1)
        if not with_grad:
            return total
        soft = np.exp(logp_edge)
        grad = -soft
        grad[..., 1] += s
        grad[..., 0] += ~s
        return total, grad
    p1 = np.exp(logp_edge[..., 1])
    A, B = _posterior_coeffs(x_t, t, sched)
    pi1 = B + p1 * (A - B)
    lp = np.where(s, np.log(pi1), np.log1p(-pi1))
    total = lp.reshape(lp.shape[0], -1).sum(axis=1)
    if not with_grad:
        return total
    dlp_dp1 = (A - B) * np.where(s, 1.0 / pi1, -1.0 / (1.0 - pi1))
    dz1 = dlp_dp1 * p1 * (1.0 - p1)
    grad = np.stack([-dz1, dz1], axis=-1)
    return total, grad


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise TrainingError(f"non-finite {what}")


def _reverse_batch(p, x_t, t, cond, sched, rng):
    logits = _logits_batch(p, x_t, t, sched, cond)
    _check_finite(logits, f"denoiser logits at step {t}")
    pi1 = transition_probs(logits, x_t, t, sched)
    x_prev = (rng.random(x_t.shape) < pi1).astype(np.int8)
    logp = step_log_prob(logits, x_t, x_prev, t, sched)
    return x_prev, logp, pi1


def reverse_step(p: ScorerParams, g_t, t: int, cond: ConditionVector,
                 sched: NoiseSchedule, rng: np.random.Generator):
    """One denoising action: returns (one-hot x_{t-1}, log-probability)."""
    if not 1 <= t <= sched.num_steps:
        raise ContractError(f"reverse step {t} outside 1..{sched.num_steps}")
    x_t = _edge_bits(g_t)[None]
    x_prev, logp, _ = _reverse_batch(p, x_t, t, cond, sched, rng)
    return one_hot_encode(x_prev[0]), float(logp[0])


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """B denoising rollouts stored step-major.

    states[k] is x_{T-k}; states[T] is the raw terminal graph x_0.
    log_probs[k] is the log-probability of the move states[k] -> states[k+1].
    """

    states: np.ndarray      # (T + 1, B, U, E) int8
    log_probs: np.ndarray   # (T, B)
    edge_probs: np.ndarray  # (B, U, E), P(x_0 = 1 | x_1)
    matchings: np.ndarray   # (B, U, E) projected terminal graphs
    quota: int

    @property
    def num_steps(self) -> int:
        return self.log_probs.shape[0]

    @property
    def size(self) -> int:
        return self.log_probs.shape[1]

    def matching(self, i: int) -> MatchingState:
        return MatchingState(self.matchings[i], self.quota)

    def trajectory(self, i: int, reward: RewardBreakdown | None = None) -> "DenoisingTrajectory":
        T = self.num_steps
        steps = tuple(
            TrajectoryStep(self.states[k, i], T - k, self.states[k + 1, i], float(self.log_probs[k, i]))
            for k in range(T))
        return DenoisingTrajectory(steps, self.states[T, i], self.matching(i), reward)


@dataclass(frozen=True, eq=False)
class TrajectoryStep:
    state: np.ndarray   # x_t
    t: int
    action: np.ndarray  # x_{t-1}
    log_prob: float


@dataclass(frozen=True, eq=False)
class DenoisingTrajectory:
    steps: tuple
    raw_terminal: np.ndarray
    matching: MatchingState
    reward: RewardBreakdown | None = None

    def __len__(self):
        return len(self.steps)


def sample_batch(p: ScorerParams, cond: ConditionVector, sched: NoiseSchedule,
                 rng: np.random.Generator, batch: int) -> TrajectoryBatch:
    shape = (batch, cond.num_users, cond.num_experts)
    T = sched.num_steps
    states = np.empty((T + 1,) + shape, dtype=np.int8)
    log_probs = np.empty((T, batch))
    # Step 1: the noisy starting graph is uniform over edge values
    states[0] = rng.integers(0, 2, size=shape)
    pi1 = None
    for k in range(T):
        t = T - k
        states[k + 1], log_probs[k], pi1 = _reverse_batch(p, states[k], t, cond, sched, rng)
    _check_finite(log_probs, "trajectory log-probabilities")
    matchings = project_topk(states[T], pi1, cond.quota)
    return TrajectoryBatch(states, log_probs, pi1, matchings, cond.quota)


def sample_matching(p: ScorerParams, cond: ConditionVector, sched: NoiseSchedule,
                    rng: np.random.Generator):
    """Generate one feasible matching and the trajectory that produced it."""
    tb = sample_batch(p, cond, sched, rng, 1)
    return tb.matching(0), tb.trajectory(0)


def trajectory_log_prob(p: ScorerParams, tb: TrajectoryBatch, cond: ConditionVector,
                        sched: NoiseSchedule) -> np.ndarray:
    """Recompute every step's log-probability from the stored states."""
    out = np.empty_like(tb.log_probs)
    T = sched.num_steps
    for k in range(T):
        t = T - k
        logits = _logits_batch(p, tb.states[k], t, sched, cond)
        out[k] = step_log_prob(logits, tb.states[k], tb.states[k + 1], t, sched)
    return out


def policy_gradient(p: ScorerParams, tb: TrajectoryBatch, weights: np.ndarray,
                    cond: ConditionVector, sched: NoiseSchedule) -> ScorerParams:
    """sum_i weights[i] * grad log p(trajectory_i) / B.

    With weights = advantages this is the REINFORCE estimate of the gradient
    of the expected reward (an ascent direction).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (tb.size,):
        raise ContractError("one weight per trajectory required")
    total = p.zeros_like()
    T = sched.num_steps
    for k in range(T):
        t = T - k
        logits, feats, cache = _logits_batch(p, tb.states[k], t, sched, cond, return_cache=True)
        _, dlogits = step_log_prob(logits, tb.states[k], tb.states[k + 1], t, sched, with_grad=True)
        upstream = (w / tb.size)[:, None] * dlogits.reshape(tb.size, -1)
        total.flat += backward(p, feats, upstream, cache=cache).flat
    return total


@dataclass(frozen=True)
class EpochStats:
    mean_reward: float
    max_reward: float
    grad_norm: float
    mean_qoe: float


def train_epoch(p: ScorerParams, opt: OptState, env, batch: int, sched: NoiseSchedule,
                rng: np.random.Generator) -> EpochStats:
    """One REINFORCE update from ``batch`` rollouts on a single fresh drop.

    ``env`` provides ``sample_drop(rng)`` (see :mod:`diffmatch.scenario`).
    The batch-mean reward is the baseline, so identical rewards give a zero
    gradient.
    """
    if batch < 2:
        raise ContractError("batch must be >= 2 for the mean-reward baseline")
    drop = env.sample_drop(rng)
    tb = sample_batch(p, drop.cond, sched, rng, batch)
    results = [drop.problem.evaluate(tb.matching(i)) for i in range(batch)]
    rewards = np.array([r.total for r in results])
    _check_finite(rewards, "rewards")
    adv = rewards - rewards.mean()
    ascent = policy_gradient(p, tb, adv, drop.cond, sched)
    gnorm = grad_norm(ascent)
    if not np.isfinite(gnorm):
        raise TrainingError(f"non-finite policy gradient (rewards {rewards})")
    np.negative(ascent.flat, out=ascent.flat)
    adam_step(p, ascent, opt)
    return EpochStats(float(rewards.mean()), float(rewards.max()), gnorm,
                      float(np.mean([r.qoe_sum for r in results])))
