"""Small fully-connected network with hand-written gradients and Adam.

tanh on hidden layers, linear output. Inputs may be a single vector or a
batch (rows are samples).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ContractError, TrainingError


def _layer_sizes(dims):
    return [(a, b) for a, b in zip(dims[:-1], dims[1:])]


def _n_params(dims) -> int:
    return sum(a * b + b for a, b in _layer_sizes(dims))


class ScorerParams:
    """Layer weights and biases stored as views into one flat buffer.

    weights[i] has shape (dims[i], dims[i+1]); biases[i] has dims[i+1].
    """

    def __init__(self, layer_dims, weights=None, biases=None, flat=None):
        dims = tuple(int(d) for d in layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ContractError(f"bad layer dims {dims}")
        self.layer_dims = dims
        n = _n_params(dims)
        if flat is None:
            flat = np.zeros(n)
        elif flat.shape != (n,) or flat.dtype != np.float64:
            raise ContractError(f"flat buffer must be float64 of length {n}")
        self.flat = flat
        self.weights, self.biases = [], []
        off = 0
        for a, b in _layer_sizes(dims):
            self.weights.append(flat[off:off + a * b].reshape(a, b))
            off += a * b
            self.biases.append(flat[off:off + b])
            off += b
        if weights is not None or biases is not None:
            if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
                raise ContractError("one weight matrix and bias per layer required")
            for i, (w, b) in enumerate(zip(weights, biases)):
                w, b = np.asarray(w), np.asarray(b)
                if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                    raise ContractError(
                        f"layer {i} shapes {w.shape}, {b.shape} do not chain with {dims}")
                self.weights[i][...] = w
                self.biases[i][...] = b

    def copy(self) -> "ScorerParams":
        return ScorerParams(self.layer_dims, flat=self.flat.copy())

    def tensors(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def zeros_like(self) -> "ScorerParams":
        return ScorerParams(self.layer_dims)

    def __repr__(self):
        return f"ScorerParams(layer_dims={self.layer_dims})"


def init_params(layer_dims, rng: np.random.Generator) -> ScorerParams:
    dims = tuple(int(d) for d in layer_dims)
    ws, bs = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(1.0 / d_in)
        ws.append(rng.uniform(-lim, lim, size=(d_in, d_out)))
        bs.append(rng.uniform(-lim, lim, size=d_out))
    return ScorerParams(dims, ws, bs)


def zero_params(layer_dims) -> ScorerParams:
    return ScorerParams(layer_dims)


def _as_batch(p: ScorerParams, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != p.layer_dims[0]:
        raise ContractError(f"input shape {x.shape} does not match input dim {p.layer_dims[0]}")
    return xb, single


def forward(p: ScorerParams, x, return_cache: bool = False):
    xb, single = _as_batch(p, x)
    acts = [xb]
    h = xb
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    out = h[0] if single else h
    if return_cache:
        return out, acts
    return out


def backward(p: ScorerParams, x, upstream, cache=None) -> ScorerParams:
    """Gradients of sum(upstream * forward(p, x)) w.r.t. all parameters.

    For a batch the contributions of all rows are summed.
    """
    xb, single = _as_batch(p, x)
    g = np.asarray(upstream, dtype=np.float64)
    g = g[None, :] if single else g
    if g.shape != (xb.shape[0], p.layer_dims[-1]):
        raise ContractError(f"upstream shape {np.shape(upstream)} does not match output")
    acts = cache if cache is not None else forward(p, xb, return_cache=True)[1]
    out = p.zeros_like()
    for i in range(len(p.weights) - 1, -1, -1):
        np.matmul(acts[i].T, g, out=out.weights[i])
        np.sum(g, axis=0, out=out.biases[i])
        if i > 0:
            g = (g @ p.weights[i].T) * (1.0 - acts[i] ** 2)
    return out


def grad_norm(grads: ScorerParams) -> float:
    return float(np.sqrt(grads.flat @ grads.flat))


@dataclass
class OptState:
    m: ScorerParams
    v: ScorerParams
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, p: ScorerParams, lr: float = 1e-3, **kw) -> "OptState":
        return cls(p.zeros_like(), p.zeros_like(), lr=lr, **kw)


def adam_step(p: ScorerParams, grads: ScorerParams, s: OptState):
    """Bias-corrected Adam update, applied in place; returns (p, s)."""
    if not kernels.all_finite(grads.flat):
        bad = int(np.sum(~np.isfinite(grads.flat)))
        raise TrainingError(f"{bad} non-finite gradient entries at optimizer step {s.step}")
    s.step += 1
    kernels.adam_update(p.flat, grads.flat, s.m.flat, s.v.flat, s.lr, s.beta1, s.beta2,
                        s.eps, 1.0 - s.beta1 ** s.step, 1.0 - s.beta2 ** s.step)
    return p, s


# Checkpoint layout, all little-endian: int64 number of dims, int64 dims,
# then per layer the weight matrix (row-major, float64) and the bias.
def save_checkpoint(p: ScorerParams, path, hyper: dict | None = None) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<q", len(p.layer_dims)))
        fh.write(struct.pack(f"<{len(p.layer_dims)}q", *p.layer_dims))
        fh.write(np.ascontiguousarray(p.flat, dtype="<f8").tobytes())
    lines = [f"layer_dims = {' '.join(map(str, p.layer_dims))}"]
    for k in sorted(hyper or {}):
        lines.append(f"{k} = {hyper[k]}")
    path.with_name(path.name + ".txt").write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> ScorerParams:
    raw = Path(path).read_bytes()
    (n,) = struct.unpack_from("<q", raw, 0)
    dims = struct.unpack_from(f"<{n}q", raw, 8)
    off = 8 + 8 * n
    count = _n_params(dims)
    if len(raw) != off + 8 * count:
        raise ContractError(f"checkpoint {path} size does not match dims {dims}")
    flat = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(np.float64)
    return ScorerParams(dims, flat=flat)


def load_hyper(path) -> dict:
    side = Path(path)
    side = side.with_name(side.name + ".txt")
    out = {}
    for line in side.read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
