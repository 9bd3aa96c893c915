import numpy as np
import pytest

from diffmatch.errors import ContractError, TrainingError
from diffmatch.scorer import (OptState, ScorerParams, adam_step, backward, forward, grad_norm,
                              init_params, load_checkpoint, load_hyper, save_checkpoint,
                              zero_params)


def central_difference(p, x, upstream, h=1e-5):
    grads = np.zeros_like(p.flat)
    for i in range(p.flat.size):
        old = p.flat[i]
        p.flat[i] = old + h
        fp = np.sum(upstream * forward(p, x))
        p.flat[i] = old - h
        fm = np.sum(upstream * forward(p, x))
        p.flat[i] = old
        grads[i] = (fp - fm) / (2 * h)
    return grads


def test_zero_net_gives_zero_output():
    p = zero_params((5, 7, 3))
    assert np.all(forward(p, np.ones(5)) == 0)


def test_identity_linear_layer():
    p = ScorerParams((4, 4), [np.eye(4)], [np.zeros(4)])
    x = np.array([1.0, -2.0, 0.5, 3.0])
    assert np.array_equal(forward(p, x), x)


def test_forward_deterministic_and_batched(rng):
    p = init_params((6, 8, 3), np.random.default_rng(3))
    q = init_params((6, 8, 3), np.random.default_rng(3))
    x = rng.normal(size=(10, 6))
    assert np.array_equal(forward(p, x), forward(q, x))
    for i in range(10):
        assert np.allclose(forward(p, x[i]), forward(p, x)[i], rtol=0, atol=1e-14)


def test_shape_errors():
    p = init_params((3, 2), np.random.default_rng(0))
    with pytest.raises(ContractError):
        forward(p, np.ones(4))
    with pytest.raises(ContractError):
        backward(p, np.ones(3), np.ones(3))
    with pytest.raises(ContractError):
        ScorerParams((3, 2), [np.ones((2, 2))], [np.ones(2)])


def test_init_scale(rng):
    p = init_params((400, 50), rng)
    lim = np.sqrt(1 / 400)
    assert np.abs(p.weights[0]).max() <= lim
    assert p.weights[0].std() == pytest.approx(lim / np.sqrt(3), rel=0.05)


def test_linear_layer_gradient_is_outer_product(rng):
    p = init_params((4, 3), rng)
    x = rng.normal(size=4)
    g = backward(p, x, np.ones(3))
    assert np.allclose(g.weights[0], np.outer(x, np.ones(3)))
    assert np.allclose(g.biases[0], 1.0)


def test_zero_upstream_zero_grads(rng):
    p = init_params((4, 5, 3), rng)
    assert not backward(p, rng.normal(size=4), np.zeros(3)).flat.any()


def test_gradients_match_finite_differences():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p = init_params((8, 16, 4), rng)
        x = rng.normal(size=(3, 8))
        up = rng.normal(size=(3, 4))
        g = backward(p, x, up).flat
        fd = central_difference(p, x, up)
        rel = np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12)
        worst = max(worst, rel)
    assert worst < 1e-4


def test_adam_zero_grads_leave_params(rng):
    p = init_params((4, 3), rng)
    before = p.flat.copy()
    s = OptState.for_params(p)
    adam_step(p, p.zeros_like(), s)
    assert np.array_equal(p.flat, before) and s.step == 1


def test_adam_first_step_moves_by_lr(rng):
    p = init_params((4, 3), rng)
    before = p.flat.copy()
    s = OptState.for_params(p, lr=0.01)
    g = p.zeros_like()
    g.flat[:] = 0.37
    adam_step(p, g, s)
    assert np.allclose(before - p.flat, 0.01, rtol=1e-6)


def test_adam_rejects_non_finite(rng):
    p = init_params((4, 3), rng)
    g = p.zeros_like()
    g.flat[2] = np.nan
    with pytest.raises(TrainingError, match="non-finite"):
        adam_step(p, g, OptState.for_params(p))


def test_adam_trajectories_reproducible():
    def run():
        rng = np.random.default_rng(9)
        p = init_params((3, 6, 1), rng)
        s = OptState.for_params(p)
        for _ in range(50):
            x = rng.normal(size=(8, 3))
            out = forward(p, x)
            adam_step(p, backward(p, x, 2 * (out - 1) / 8), s)
        return p.flat.copy()
    assert np.array_equal(run(), run())


def test_regression_smoke():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(32, 4))
    y = np.sin(x[:, :1]) + 0.5 * x[:, 1:2] * x[:, 2:3]
    p = init_params((4, 32, 1), rng)
    s = OptState.for_params(p, lr=1e-2)
    loss0 = np.mean((forward(p, x) - y) ** 2)
    for _ in range(2000):
        out, cache = forward(p, x, return_cache=True)
        adam_step(p, backward(p, x, 2 * (out - y) / 32, cache), s)
    loss = np.mean((forward(p, x) - y) ** 2)
    assert loss0 / loss >= 100


def test_checkpoint_round_trip(tmp_path, rng):
    p = init_params((5, 7, 2), rng)
    path = tmp_path / "net.bin"
    save_checkpoint(p, path, {"lr": 0.001, "steps": 6})
    q = load_checkpoint(path)
    assert q.layer_dims == p.layer_dims and np.array_equal(q.flat, p.flat)
    raw = path.read_bytes()
    assert int.from_bytes(raw[:8], "little") == 3
    assert len(raw) == 8 + 3 * 8 + 8 * p.flat.size
    assert load_hyper(path) == {"layer_dims": "5 7 2", "lr": "0.001", "steps": "6"}
    path.write_bytes(raw[:-8])
    with pytest.raises(ContractError):
        load_checkpoint(path)


def test_grad_norm(rng):
    p = init_params((3, 2), rng)
    assert grad_norm(p) == pytest.approx(np.linalg.norm(p.flat))
