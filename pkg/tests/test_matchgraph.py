import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from diffmatch.errors import ConfigurationError, ContractError
from diffmatch.matchgraph import (MatchingState, decode, derive_streams, is_feasible,
                                  new_empty, one_hot_encode, project_topk, random_matching)


def test_new_empty_default_shape():
    m = new_empty(15, 6, 2)
    assert m.assign.shape == (15, 6)
    assert not m.assign.any()
    assert not m.feasible


def test_new_empty_minimal():
    assert new_empty(1, 1, 1).assign.tolist() == [[0]]


@pytest.mark.parametrize("shape", [(2, 3, 4), (0, 3, 1), (2, 0, 1), (2, 3, 0)])
def test_new_empty_rejects_bad_shapes(shape):
    with pytest.raises(ConfigurationError):
        new_empty(*shape)


def test_feasibility_examples():
    assert is_feasible(MatchingState([[1, 1, 0]], 2))
    assert not is_feasible(MatchingState([[1, 0, 0]], 2))
    assert not is_feasible(MatchingState(np.ones((15, 6)), 2))


def test_state_rejects_non_binary_and_is_immutable():
    with pytest.raises(ConfigurationError):
        MatchingState([[2, 0]], 1)
    m = MatchingState([[1, 0]], 1)
    with pytest.raises(ValueError):
        m.assign[0, 0] = 0


def test_one_hot_examples():
    g = one_hot_encode(MatchingState([[1, 0]], 1))
    assert g.tolist() == [[[0, 1], [1, 0]]]
    z = one_hot_encode(new_empty(3, 4, 1))
    assert (z[..., 0] == 1).all() and (z[..., 1] == 0).all()


def test_one_hot_round_trip_exhaustive_small():
    for u, e in itertools.product(range(1, 4), repeat=2):
        for bits in itertools.product((0, 1), repeat=u * e):
            a = np.array(bits).reshape(u, e)
            m = MatchingState(a, 1)
            g = one_hot_encode(m)
            assert np.all(g.sum(-1) == 1)
            assert decode(g, 1) == m


def test_one_hot_round_trip_random(rng):
    for _ in range(1000):
        u, e = rng.integers(1, 9, size=2)
        m = MatchingState(rng.integers(0, 2, size=(u, e)), 1)
        assert decode(one_hot_encode(m), 1) == m


def test_decode_rejects_bad_shape():
    with pytest.raises(ContractError):
        decode(np.zeros((2, 3)), 1)


def test_random_matching_full_quota_is_all_ones(rng):
    for _ in range(5):
        assert random_matching(rng, 4, 3, 3).assign.all()


def test_random_matching_deterministic():
    a = random_matching(np.random.default_rng(7), 15, 6, 2)
    b = random_matching(np.random.default_rng(7), 15, 6, 2)
    assert a == b and a.feasible


def test_random_matching_edge_frequency():
    rng = np.random.default_rng(1)
    n = 100_000
    # one user per row: a (n, 6) batch is n independent draws of (1, 6, 2)
    freq = random_matching(rng, n, 6, 2).assign.mean(axis=0)
    assert np.all(np.abs(freq - 2 / 6) < 0.01)


def test_random_matching_subsets_uniform_chi_square():
    rng = np.random.default_rng(2)
    a = random_matching(rng, 100_000, 6, 2).assign
    subsets = list(itertools.combinations(range(6), 2))
    code = {s: i for i, s in enumerate(subsets)}
    idx = [code[tuple(np.flatnonzero(r))] for r in a]
    counts = np.bincount(idx, minlength=len(subsets))
    assert stats.chisquare(counts).pvalue > 0.001


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 7), st.data())
def test_random_matching_always_feasible(u, e, data):
    q = data.draw(st.integers(1, e))
    seed = data.draw(st.integers(0, 2**32 - 1))
    m = random_matching(np.random.default_rng(seed), u, e, q)
    assert m.feasible


def test_derive_streams_examples():
    p = derive_streams(MatchingState([[1, 0], [1, 0]], 1))
    assert p.common_experts == {0} and p.private_pairs == () and p.inactive_experts == {1}
    p = derive_streams(MatchingState([[1, 0], [0, 1]], 1))
    assert p.private_pairs == ((0, 0), (1, 1)) and not p.common_experts


def test_derive_streams_matches_column_sums(rng):
    for _ in range(50):
        m = random_matching(rng, 15, 6, 2)
        load = m.assign.sum(axis=0)
        p = derive_streams(m)
        assert p.common_experts == {e for e in range(6) if load[e] >= 2}
        assert p.inactive_experts == {e for e in range(6) if load[e] == 0}
        assert {e for _, e in p.private_pairs} == {e for e in range(6) if load[e] == 1}
        for u, e in p.private_pairs:
            assert m.assign[u, e] == 1
        assert len(p.common_experts) + len(p.private_pairs) + len(p.inactive_experts) == 6
        want = [sum(m.assign[u, e] for e in p.common_experts) for u in range(15)]
        assert list(p.common_counts) == want


def test_derive_streams_rejects_infeasible():
    with pytest.raises(ContractError):
        derive_streams(MatchingState([[1, 1]], 1))


def test_text_round_trip(rng):
    m = random_matching(rng, 5, 4, 2)
    txt = m.to_text()
    assert txt.splitlines()[0].count(" ") == 3
    assert MatchingState.from_text(txt, 2) == m
    with pytest.raises(ConfigurationError):
        MatchingState.from_text("1 0\n1\n", 1)


def test_projection_identity_on_feasible(rng):
    for _ in range(100):
        m = random_matching(rng, 6, 5, 2)
        probs = rng.random((6, 5))
        assert np.array_equal(project_topk(m.assign, probs, 2), m.assign)


def test_projection_ranks_by_value_then_probability_then_index():
    x0 = np.array([[1, 1, 1, 0], [0, 0, 0, 0], [0, 0, 0, 0]])
    probs = np.array([[0.2, 0.9, 0.5, 0.99], [0.1, 0.3, 0.3, 0.2], [0.5, 0.5, 0.5, 0.5]])
    out = project_topk(x0, probs, 2)
    assert out.tolist() == [[0, 1, 1, 0], [0, 1, 1, 0], [1, 1, 0, 0]]


def test_projection_batched_matches_single(rng):
    x0 = rng.integers(0, 2, size=(7, 4, 5))
    probs = rng.random((7, 4, 5))
    batched = project_topk(x0, probs, 3)
    for i in range(7):
        assert np.array_equal(batched[i], project_topk(x0[i], probs[i], 3))
    assert np.all(batched.sum(-1) == 3)
