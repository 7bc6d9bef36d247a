"""Minimal dense / graph layers with hand-derived gradients, plus Adam.

Everything is float64 numpy; forward functions accept a leading batch
dimension.  Backward functions recompute the cheap forward internals
rather than threading caches through the call sites.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

ACTIVATIONS = ("elu", "tanh", "identity")


def elu(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    # exp only sees the non-positive branch, so large inputs cannot overflow
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(x)
    return 1.0 - t * t


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "elu":
        return elu(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _activate_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "elu":
        return elu_grad(z)
    if name == "tanh":
        return tanh_grad(z)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


def glorot_uniform(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


@dataclass
class DenseLayer:
    """y = act(W x + b) with W (out, in), b (out,)."""

    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"inconsistent dense shapes {self.W.shape}, {self.b.shape}")

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]


def make_dense(rng: np.random.Generator, n_in: int, n_out: int, activation: str) -> DenseLayer:
    return DenseLayer(glorot_uniform(rng, n_out, n_in), np.zeros(n_out), activation)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.n_in:
        raise ValueError(f"dense input dim {x.shape[-1]} != {layer.n_in}")
    return _activate(layer.activation, x @ layer.W.T + layer.b)


def dense_backward(layer: DenseLayer, x: np.ndarray, upstream: np.ndarray):
    """Gradients for y = act(Wx + b).

    Returns (dx, dW, db); parameter gradients are summed over any batch
    dimensions of x.
    """
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    z = x @ layer.W.T + layer.b
    dz = upstream * _activate_grad(layer.activation, z)
    x2 = x.reshape(-1, layer.n_in)
    dz2 = dz.reshape(-1, layer.n_out)
    dW = dz2.T @ x2
    db = dz2.sum(axis=0)
    dx = (dz2 @ layer.W).reshape(x.shape)
    return dx, dW, db


@dataclass
class SageLayer:
    """Mean-aggregation graph convolution: h_i' = act(W_s h_i + W_n mean_j h_j + b)."""

    W_self: np.ndarray
    W_neigh: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W_self.shape != self.W_neigh.shape or self.b.shape != (self.W_self.shape[0],):
            raise ValueError("inconsistent sage shapes")

    @property
    def n_in(self) -> int:
        return self.W_self.shape[1]

    @property
    def n_out(self) -> int:
        return self.W_self.shape[0]


def make_sage(rng: np.random.Generator, n_in: int, n_out: int, activation: str) -> SageLayer:
    return SageLayer(
        glorot_uniform(rng, n_out, n_in),
        glorot_uniform(rng, n_out, n_in),
        np.zeros(n_out),
        activation,
    )


def _row_normalized(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    deg = A.sum(axis=-1, keepdims=True)
    return A / np.maximum(deg, 1.0)


def sage_forward(layer: SageLayer, X: np.ndarray, A: np.ndarray) -> np.ndarray:
    """X is (..., L, in), A is (..., L, L); isolated nodes aggregate zero."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != layer.n_in:
        raise ValueError(f"sage input dim {X.shape[-1]} != {layer.n_in}")
    if A.shape[-1] != X.shape[-2]:
        raise ValueError("adjacency does not match node count")
    agg = _row_normalized(A) @ X
    z = X @ layer.W_self.T + agg @ layer.W_neigh.T + layer.b
    return _activate(layer.activation, z)


def sage_backward(layer: SageLayer, X: np.ndarray, A: np.ndarray, upstream: np.ndarray):
    """Returns (dX, dW_self, dW_neigh, db), parameter grads summed over batch."""
    X = np.asarray(X, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    An = _row_normalized(A)
    agg = An @ X
    z = X @ layer.W_self.T + agg @ layer.W_neigh.T + layer.b
    dz = upstream * _activate_grad(layer.activation, z)
    dz2 = dz.reshape(-1, layer.n_out)
    dW_self = dz2.T @ X.reshape(-1, layer.n_in)
    dW_neigh = dz2.T @ agg.reshape(-1, layer.n_in)
    db = dz2.sum(axis=0)
    dagg = dz @ layer.W_neigh
    dX = dz @ layer.W_self + np.swapaxes(An, -1, -2) @ dagg
    return dX, dW_self, dW_neigh, db


def mse(x: np.ndarray, y: np.ndarray) -> float:
    """Mean of squared differences over all entries."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    d = x - y
    return float(np.mean(d * d))


def mse_grad(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d mse / d x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    return 2.0 * (x - y) / x.size


@dataclass
class AdamState:
    """First/second moment accumulators for one flat list of parameter arrays."""

    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"param/grad shape mismatch {p.shape} vs {g.shape}")
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return new_p, replace(state, m=new_m, v=new_v, step=t)


def finite_difference_grads(loss_fn, params, h: float = 1e-6):
    """Central finite differences of loss_fn() w.r.t. the live param arrays."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn()
            flat[k] = orig - h
            down = loss_fn()
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def grad_check(loss_fn, grad_fn, params, h: float = 1e-6) -> dict:
    """Compare analytic gradients against central finite differences.

    Relative error uses a floor of 1e-3 times the largest gradient
    magnitude, so finite-difference noise on near-zero components does not
    dominate.  A fragment with no parameters (or all-zero gradients)
    passes vacuously with error 0.
    """
    analytic = grad_fn()
    numeric = finite_difference_grads(loss_fn, params, h=h)
    gmax = 0.0
    for a, n in zip(analytic, numeric):
        if a.size:
            gmax = max(gmax, float(np.max(np.abs(a))), float(np.max(np.abs(n))))
    floor = max(1e-3 * gmax, 1e-12)
    max_rel = 0.0
    per_param = []
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            per_param.append(0.0)
            continue
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = float(rel.max())
        per_param.append(worst)
        max_rel = max(max_rel, worst)
    return {"max_rel_err": max_rel, "per_param": per_param,
            "n_params": int(sum(p.size for p in params))}
