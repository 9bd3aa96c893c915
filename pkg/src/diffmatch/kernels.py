"""Hot numeric kernels.

Every function here is compiled with numba unless ``DIFFMATCH_JIT=0``, in
which case the identical body runs as ordinary Python over numpy arrays.
Kernels never raise domain errors; they return status values that the
calling module turns into exceptions.
"""
import numpy as np

from ._jit import njit, with_fallback

# Common-precoder sums shorter than this are treated as exactly cancelling.
COMMON_NULL_TOL = 1e-12


@njit
def zf_columns(hsub):
    """Unit-norm zero-forcing directions for the rows of ``hsub``.

    ``hsub`` is K x N with row u holding h_u; the effective channel seen by
    user u is h_u^H x. Returns (P, kappa) with P of shape N x K and kappa the
    2-norm condition number of the stacked h_u^H rows. When kappa is not
    finite the columns are left unnormalized.
    """
    H = np.conj(hsub)
    kappa = np.linalg.cond(H)
    P = np.linalg.pinv(H)
    if not np.isfinite(kappa):
        return P, kappa
    for k in range(P.shape[1]):
        nrm = np.sqrt(np.sum(np.abs(P[:, k]) ** 2))
        if nrm > 0.0:
            P[:, k] = P[:, k] / nrm
    return P, kappa


@njit
def common_direction(hsub):
    """Normalized sum of the receivers' channel directions.

    Returns the zero vector when the directions cancel (e.g. h2 = -h1), which
    gives zero array gain instead of a division by zero.
    """
    n_ant = hsub.shape[1]
    acc = np.zeros(n_ant, dtype=np.complex128)
    for u in range(hsub.shape[0]):
        nrm = np.sqrt(np.sum(np.abs(hsub[u]) ** 2))
        if nrm > 0.0:
            acc += hsub[u] / nrm
    total = np.sqrt(np.sum(np.abs(acc) ** 2))
    if total < COMMON_NULL_TOL:
        return np.zeros(n_ant, dtype=np.complex128)
    return acc / total


@njit
def rsma_rates(h, private_users, common_users, common_share,
               p_common, p_private, noise, cond_limit):
    """One-layer RSMA rates with ZF private streams and ideal SIC.

    h: U x N complex channels. private_users / common_users: int64 index
    arrays. common_share[u]: fraction of the common stream rate credited to
    user u. Returns (r_common, r_private, r_total, kappa); when kappa exceeds
    ``cond_limit`` the rate arrays are zero and the caller must reject the
    drop.
    """
    n_users = h.shape[0]
    r_private = np.zeros(n_users)
    r_total = np.zeros(n_users)
    hc = np.ascontiguousarray(np.conj(h))
    n_priv = private_users.shape[0]

    # cross[u, k] = |h_u^H p_k|^2 for private stream k
    cross = np.zeros((n_users, n_priv))
    kappa = 1.0
    if n_priv > 0:
        hsub = np.ascontiguousarray(h[private_users])
        P, kappa = zf_columns(hsub)
        if not (kappa <= cond_limit):
            return 0.0, r_private, r_total, kappa
        G = hc @ np.ascontiguousarray(P)
        cross = np.abs(G) ** 2

    r_common = 0.0
    if common_users.shape[0] > 0:
        pc = common_direction(np.ascontiguousarray(h[common_users]))
        gains = np.abs(hc @ pc) ** 2
        r_common = np.inf
        for i in range(common_users.shape[0]):
            u = common_users[i]
            interf = 0.0
            for k in range(n_priv):
                interf += p_private * cross[u, k]
            sinr = p_common * gains[u] / (interf + noise)
            r = np.log2(1.0 + sinr)
            if r < r_common:
                r_common = r

    for k in range(n_priv):
        u = private_users[k]
        interf = 0.0
        for j in range(n_priv):
            if j != k:
                interf += p_private * cross[u, j]
        sinr = p_private * cross[u, k] / (interf + noise)
        r_private[u] = np.log2(1.0 + sinr)

    for u in range(n_users):
        r_total[u] = r_private[u] + r_common * common_share[u]
    return r_common, r_private, r_total, kappa


@njit
def assign_min_cost(cost):
    """Shortest-augmenting-path assignment for an n x m cost matrix, n <= m.

    Returns row_to_col with every row assigned to a distinct column.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j] != 0:
            row_to_col[p[j] - 1] = j - 1
    return row_to_col


@njit
def deferred_acceptance_kernel(user_prefs, expert_rank, capacity):
    """User-proposing deferred acceptance with capacitated experts.

    user_prefs[u] lists experts best-first; expert_rank[e, u] is u's
    position in e's list (0 = best). Returns (match, proposals) where
    match[u] is the expert index or -1.
    """
    n_users, n_experts = user_prefs.shape
    match = np.full(n_users, -1, dtype=np.int64)
    next_idx = np.zeros(n_users, dtype=np.int64)
    held = np.full((n_experts, n_users), -1, dtype=np.int64)
    n_held = np.zeros(n_experts, dtype=np.int64)
    free = np.empty(n_users, dtype=np.int64)
    for i in range(n_users):
        free[i] = n_users - 1 - i
    top = n_users
    proposals = 0
    while top > 0:
        top -= 1
        u = free[top]
        if next_idx[u] >= n_experts:
            continue
        e = user_prefs[u, next_idx[u]]
        next_idx[u] += 1
        proposals += 1
        if n_held[e] < capacity[e]:
            held[e, n_held[e]] = u
            n_held[e] += 1
            match[u] = e
            continue
        worst_k = 0
        for k in range(1, n_held[e]):
            if expert_rank[e, held[e, k]] > expert_rank[e, held[e, worst_k]]:
                worst_k = k
        w = held[e, worst_k]
        if expert_rank[e, u] < expert_rank[e, w]:
            held[e, worst_k] = u
            match[u] = e
            match[w] = -1
            free[top] = w
        else:
            free[top] = u
        top += 1
    return match, proposals


def _adam_update_numpy(param, grad, m, v, lr, beta1, beta2, eps, corr1, corr2):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= (lr / corr1) * m / (np.sqrt(v * (1.0 / corr2)) + eps)


@with_fallback(_adam_update_numpy)
def adam_update(param, grad, m, v, lr, beta1, beta2, eps, corr1, corr2):
    """Fused in-place Adam step over flat float64 buffers."""
    step = lr / corr1
    inv2 = 1.0 / corr2
    for i in range(param.shape[0]):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        param[i] -= step * m[i] / (np.sqrt(v[i] * inv2) + eps)


def _all_finite_numpy(x):
    return bool(np.all(np.isfinite(x)))


@with_fallback(_all_finite_numpy)
def all_finite(x):
    for i in range(x.shape[0]):
        if not np.isfinite(x[i]):
            return False
    return True
