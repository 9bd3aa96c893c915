"""Classical matching algorithms and exact small-instance oracles."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .errors import ConfigurationError, ContractError, SearchSpaceError
from .matchgraph import MatchingState, _check_shape

BRUTE_FORCE_LIMIT = 10**6


@dataclass(frozen=True, eq=False)
class PreferenceProfile:
    """Strict two-sided preferences, best first.

    user_prefs[u] ranks experts; expert_prefs[e] ranks users. Ties are not
    representable: every ranking must be a permutation.
    """

    user_prefs: np.ndarray
    expert_prefs: np.ndarray
    expert_capacity: np.ndarray

    def __post_init__(self):
        up = np.array(self.user_prefs, dtype=np.int64)
        ep = np.array(self.expert_prefs, dtype=np.int64)
        cap = np.array(self.expert_capacity, dtype=np.int64).reshape(-1)
        if up.ndim != 2 or ep.ndim != 2:
            raise ConfigurationError("preference tables must be 2-D")
        n_users, n_experts = up.shape
        if ep.shape != (n_experts, n_users):
            raise ConfigurationError(
                f"expert_prefs shape {ep.shape} does not match {(n_experts, n_users)}")
        for u, row in enumerate(up):
            if sorted(row.tolist()) != list(range(n_experts)):
                raise ConfigurationError(f"user {u} ranking is not a strict permutation: {row.tolist()}")
        for e, row in enumerate(ep):
            if sorted(row.tolist()) != list(range(n_users)):
                raise ConfigurationError(f"expert {e} ranking is not a strict permutation: {row.tolist()}")
        if cap.shape != (n_experts,) or (cap < 1).any():
            raise ConfigurationError("expert capacities must be >= 1, one per expert")
        for name, arr in (("user_prefs", up), ("expert_prefs", ep), ("expert_capacity", cap)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_users(self) -> int:
        return self.user_prefs.shape[0]

    @property
    def num_experts(self) -> int:
        return self.user_prefs.shape[1]

    def expert_rank(self) -> np.ndarray:
        """rank[e, u] = position of user u in expert e's list."""
        rank = np.empty_like(self.expert_prefs)
        cols = np.arange(self.num_users)
        for e, row in enumerate(self.expert_prefs):
            rank[e, row] = cols
        return rank

    def user_rank(self) -> np.ndarray:
        rank = np.empty_like(self.user_prefs)
        cols = np.arange(self.num_experts)
        for u, row in enumerate(self.user_prefs):
            rank[u, row] = cols
        return rank


def random_profile(rng: np.random.Generator, num_users: int, num_experts: int,
                   capacity: int | np.ndarray = 1) -> PreferenceProfile:
    up = np.argsort(rng.random((num_users, num_experts)), axis=1)
    ep = np.argsort(rng.random((num_experts, num_users)), axis=1)
    cap = np.broadcast_to(np.asarray(capacity, dtype=np.int64), (num_experts,))
    return PreferenceProfile(up, ep, cap)


def deferred_acceptance(p: PreferenceProfile, return_proposals: bool = False):
    """User-proposing deferred acceptance (one expert per user).

    Users left unmatched (only possible when total capacity < num_users)
    get an all-zero row.
    """
    match, proposals = kernels.deferred_acceptance_kernel(
        np.ascontiguousarray(p.user_prefs), p.expert_rank(),
        np.ascontiguousarray(p.expert_capacity))
    assign = np.zeros((p.num_users, p.num_experts), dtype=np.int8)
    for u, e in enumerate(match):
        if e >= 0:
            assign[u, e] = 1
    m = MatchingState(assign, 1)
    if return_proposals:
        return m, int(proposals)
    return m


def find_blocking_pair(m: MatchingState, p: PreferenceProfile):
    """First blocking pair (u, e) in row-major order, or None.

    (u, e) blocks when u strictly prefers e to its current expert (any
    expert beats being unmatched) and e either has a spare seat or strictly
    prefers u to the worst user it currently holds.
    """
    a = m.assign
    if a.shape != (p.num_users, p.num_experts):
        raise ContractError("matching and profile dimensions differ")
    if (a.sum(axis=1) > 1).any():
        raise ContractError("stability is defined for quota-1 matchings")
    load = a.sum(axis=0)
    if (load > p.expert_capacity).any():
        # over-capacity experts are not a valid outcome; report the first one
        e = int(np.flatnonzero(load > p.expert_capacity)[0])
        return int(np.flatnonzero(a[:, e])[0]), e
    urank = p.user_rank()
    erank = p.expert_rank()
    for u in range(p.num_users):
        cur = np.flatnonzero(a[u])
        cur_rank = urank[u, cur[0]] if cur.size else p.num_experts
        for e in range(p.num_experts):
            if urank[u, e] >= cur_rank:
                continue
            held = np.flatnonzero(a[:, e])
            if load[e] < p.expert_capacity[e]:
                return u, e
            if erank[e, u] < erank[e, held].max():
                return u, e
    return None


def is_stable(m: MatchingState, p: PreferenceProfile) -> bool:
    return find_blocking_pair(m, p) is None


def max_weight_assignment(weights, quota: int, method: str = "augmenting") -> MatchingState:
    """Feasible matching maximizing the summed weights of selected edges.

    ``augmenting`` solves, per user, an assignment between ``quota`` copies of
    the user and the experts with the shortest-augmenting-path kernel. Since
    experts are uncapacitated the users decouple. ``topk`` simply takes each
    row's largest weights (ties to the lower expert index). Both are exact.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ContractError("weights must be a matrix")
    if not np.isfinite(w).all():
        raise ContractError("weights must be finite")
    n_users, n_experts = w.shape
    _check_shape(n_users, n_experts, quota)
    assign = np.zeros(w.shape, dtype=np.int8)
    if method == "augmenting":
        for u in range(n_users):
            cost = np.ascontiguousarray(np.repeat(-w[u][None, :], quota, axis=0))
            cols = kernels.assign_min_cost(cost)
            assign[u, cols] = 1
    elif method == "topk":
        order = np.argsort(-w, axis=1, kind="stable")
        np.put_along_axis(assign, order[:, :quota], 1, axis=1)
    else:
        raise ContractError(f"unknown method {method!r}")
    return MatchingState(assign, quota)


def matching_value(m: MatchingState, weights) -> float:
    return float(np.sum(np.asarray(weights, dtype=np.float64) * m.assign))


def count_feasible(num_users: int, num_experts: int, quota: int) -> int:
    return math.comb(num_experts, quota) ** num_users


def iter_feasible(num_users: int, num_experts: int, quota: int):
    """All feasible matchings, lexicographic in the row-subset encoding."""
    rows = []
    for subset in itertools.combinations(range(num_experts), quota):
        r = np.zeros(num_experts, dtype=np.int8)
        r[list(subset)] = 1
        rows.append(r)
    for combo in itertools.product(range(len(rows)), repeat=num_users):
        yield MatchingState(np.stack([rows[i] for i in combo]), quota)


def brute_force_best(score: Callable[[MatchingState], float], num_users: int,
                     num_experts: int, quota: int, limit: int = BRUTE_FORCE_LIMIT):
    """Exhaustive argmax of ``score`` over feasible matchings.

    Ties keep the first candidate in lexicographic order.
    """
    _check_shape(num_users, num_experts, quota)
    size = count_feasible(num_users, num_experts, quota)
    if size > limit:
        raise SearchSpaceError(
            f"{size} feasible matchings (C({num_experts},{quota})^{num_users}) exceed the limit {limit}")
    best, best_val = None, -np.inf
    for m in iter_feasible(num_users, num_experts, quota):
        val = float(score(m))
        if val > best_val:
            best, best_val = m, val
    return best, best_val


def greedy_matching(score: Callable[[np.ndarray, int], float], num_users: int,
                    num_experts: int, quota: int) -> MatchingState:
    """Fill rows in user order, each with its best quota-subset.

    ``score(assign, n_rows)`` evaluates the partial matching formed by the
    first ``n_rows`` rows of ``assign``. Because the rows already placed are
    fixed, maximizing the score of the extended prefix is the same as
    maximizing the marginal gain. Ties go to the lexicographically first
    subset.
    """
    _check_shape(num_users, num_experts, quota)
    assign = np.zeros((num_users, num_experts), dtype=np.int8)
    subsets = list(itertools.combinations(range(num_experts), quota))
    for u in range(num_users):
        best_sub, best_val = None, -np.inf
        for sub in subsets:
            assign[u] = 0
            assign[u, list(sub)] = 1
            val = float(score(assign, u + 1))
            if val > best_val:
                best_sub, best_val = sub, val
        assign[u] = 0
        assign[u, list(best_sub)] = 1
    return MatchingState(assign, quota)
