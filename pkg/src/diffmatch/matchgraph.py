"""Bipartite user/expert matching graphs.

A matching is a dense binary ``num_users x num_experts`` matrix. Each user
must be assigned exactly ``quota`` experts for the matching to be feasible;
experts have no capacity limit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError


def _check_shape(num_users: int, num_experts: int, quota: int) -> None:
    if num_users < 1 or num_experts < 1:
        raise ConfigurationError(
            f"need at least one user and one expert, got {num_users}x{num_experts}")
    if quota < 1 or quota > num_experts:
        raise ConfigurationError(
            f"quota must lie in [1, {num_experts}], got {quota}")


@dataclass(frozen=True, eq=False)
class MatchingState:
    """Binary assignment matrix plus the per-user quota it should satisfy."""

    assign: np.ndarray
    quota: int

    def __post_init__(self):
        a = np.array(self.assign, dtype=np.int8, copy=True)
        if a.ndim != 2:
            raise ConfigurationError(f"assign must be 2-D, got shape {a.shape}")
        if not np.isin(a, (0, 1)).all():
            raise ConfigurationError("assign entries must be 0 or 1")
        _check_shape(a.shape[0], a.shape[1], self.quota)
        a.setflags(write=False)
        object.__setattr__(self, "assign", a)

    @property
    def num_users(self) -> int:
        return self.assign.shape[0]

    @property
    def num_experts(self) -> int:
        return self.assign.shape[1]

    @property
    def feasible(self) -> bool:
        return is_feasible(self)

    def __eq__(self, other):
        if not isinstance(other, MatchingState):
            return NotImplemented
        return self.quota == other.quota and np.array_equal(self.assign, other.assign)

    def __hash__(self):
        return hash((self.quota, self.assign.shape, self.assign.tobytes()))

    def experts_of(self, user: int) -> np.ndarray:
        return np.flatnonzero(self.assign[user])

    def to_text(self) -> str:
        return "\n".join(" ".join(str(int(v)) for v in row) for row in self.assign) + "\n"

    @classmethod
    def from_text(cls, text: str, quota: int) -> "MatchingState":
        rows = [line.split() for line in text.splitlines() if line.strip()]
        if not rows:
            raise ConfigurationError("empty matching grid")
        if len({len(r) for r in rows}) != 1:
            raise ConfigurationError("ragged matching grid")
        try:
            grid = [[int(tok) for tok in r] for r in rows]
        except ValueError as exc:
            raise ConfigurationError(f"non-integer entry in matching grid: {exc}") from None
        return cls(np.array(grid), quota)

    def __repr__(self):
        return f"MatchingState(quota={self.quota}, assign=\n{self.assign})"


@dataclass(frozen=True)
class StreamPartition:
    """How the experts of a feasible matching map onto RSMA streams.

    ``common_counts[u]`` is the number of common experts user u consumes;
    ``private_users`` lists users owning at least one private expert, i.e.
    the users that receive a ZF private stream.
    """

    common_experts: frozenset
    private_pairs: tuple
    inactive_experts: frozenset
    common_counts: tuple = field(repr=False)

    @property
    def num_users(self) -> int:
        return len(self.common_counts)

    @property
    def private_users(self) -> tuple:
        return tuple(sorted({u for u, _ in self.private_pairs}))

    @property
    def common_users(self) -> tuple:
        return tuple(u for u, c in enumerate(self.common_counts) if c > 0)

    @property
    def active_experts(self) -> int:
        return len(self.common_experts) + len(self.private_pairs)


def new_empty(num_users: int, num_experts: int, quota: int) -> MatchingState:
    _check_shape(num_users, num_experts, quota)
    return MatchingState(np.zeros((num_users, num_experts), dtype=np.int8), quota)


def is_feasible(m: MatchingState) -> bool:
    return bool(np.all(m.assign.sum(axis=1) == m.quota))


def one_hot_encode(m: MatchingState | np.ndarray) -> np.ndarray:
    """Channel 0 holds "no edge", channel 1 holds "edge"."""
    a = m.assign if isinstance(m, MatchingState) else np.asarray(m)
    g = np.empty(a.shape + (2,), dtype=np.float64)
    g[..., 1] = a
    g[..., 0] = 1.0 - g[..., 1]
    return g


def decode(g: np.ndarray, quota: int) -> MatchingState:
    """Inverse of :func:`one_hot_encode` for hard graphs (argmax per edge).

    Ties between the two channels resolve to "no edge".
    """
    g = np.asarray(g)
    if g.ndim != 3 or g.shape[-1] != 2:
        raise ContractError(f"one-hot graph must have shape (U, E, 2), got {g.shape}")
    return MatchingState((g[..., 1] > g[..., 0]).astype(np.int8), quota)


def random_matching(rng: np.random.Generator, num_users: int, num_experts: int,
                    quota: int) -> MatchingState:
    """Feasible matching with each row a uniform random quota-subset."""
    _check_shape(num_users, num_experts, quota)
    # ranks of iid uniforms are a uniform permutation per row
    order = np.argsort(rng.random((num_users, num_experts)), axis=1)
    assign = np.zeros((num_users, num_experts), dtype=np.int8)
    np.put_along_axis(assign, order[:, :quota], 1, axis=1)
    return MatchingState(assign, quota)


def derive_streams(m: MatchingState) -> StreamPartition:
    if not is_feasible(m):
        raise ContractError("stream partition requires a feasible matching")
    load = m.assign.sum(axis=0)
    common = frozenset(int(e) for e in np.flatnonzero(load >= 2))
    inactive = frozenset(int(e) for e in np.flatnonzero(load == 0))
    private = []
    for e in np.flatnonzero(load == 1):
        u = int(np.flatnonzero(m.assign[:, e])[0])
        private.append((u, int(e)))
    private.sort()
    is_common = load >= 2
    counts = tuple(int(c) for c in (m.assign[:, is_common].sum(axis=1)))
    return StreamPartition(common, tuple(private), inactive, counts)


def project_topk(x0: np.ndarray, probs: np.ndarray, quota: int) -> np.ndarray:
    """Keep each row's ``quota`` best edges.

    Edges are ranked by sampled value first, then by edge probability, then
    by lower expert index. A row that already holds exactly ``quota`` ones is
    returned unchanged. Works on (U, E) or batched (..., U, E) inputs.
    """
    x0 = np.asarray(x0)
    probs = np.asarray(probs, dtype=np.float64)
    num_experts = x0.shape[-1]
    idx = np.broadcast_to(np.arange(num_experts), x0.shape)
    # np.lexsort sorts by the last key first; all keys ascending
    order = np.lexsort((idx, -probs, -x0.astype(np.float64)), axis=-1)
    out = np.zeros(x0.shape, dtype=np.int8)
    np.put_along_axis(out, order[..., :quota], 1, axis=-1)
    return out
