"""The independently recurrent layer: h_t = act(W x_t + u * h_{t-1} + b).

Sequences are laid out (time, batch, feature). The recurrent part runs in
fused numba loops: one pass per element does multiply, add and activation,
and the backward pass walks time in reverse carrying ``u * delta``.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .errors import ConfigError, ShapeError
from .numerics import glorot_bound

ACTIVATIONS = ("relu", "tanh", "identity")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}

EVERY_STEP = "every_step"
LAST_STEP_ONLY = "last_step_only"


@dataclass
class IndRnnLayer:
    """Parameters of one layer.

    ``W`` may be ``None`` for a recurrent-only layer whose input already has
    width N (the input projection then lives in a separate weight node).
    """

    W: Optional[np.ndarray]
    u: np.ndarray
    b: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in _ACT_CODE:
            raise ConfigError(f"unknown activation {self.activation!r}", "activation")

    @property
    def hidden(self):
        return self.u.shape[0]

    @property
    def input_dim(self):
        return self.hidden if self.W is None else self.W.shape[1]


@dataclass
class ForwardCache:
    inputs: np.ndarray   # T x B x M
    preacts: np.ndarray  # T x B x N
    states: np.ndarray   # (T+1) x B x N, states[0] is h0


@dataclass
class LayerGrads:
    dW: Optional[np.ndarray]
    du: np.ndarray
    db: np.ndarray
    dX: np.ndarray
    dH0: np.ndarray


def recurrent_bound(gamma, T):
    """Largest |u_n| keeping u_n^(T) within gamma."""
    if np.isinf(gamma):
        return np.inf
    return float(gamma) ** (1.0 / T)


def init_layer(M, N, T, rng, mode=EVERY_STEP, gamma=1.0, epsilon=0.01,
               activation="relu", input_weights=True):
    if min(M, N, T) < 1:
        raise ConfigError(f"layer sizes must be positive, got M={M} N={N} T={T}")
    if not 0 < epsilon < gamma:
        raise ConfigError(f"need 0 < epsilon < gamma, got epsilon={epsilon} gamma={gamma}",
                          "epsilon")
    hi = recurrent_bound(gamma, T)
    if not np.isfinite(hi):
        raise ConfigError("initialization needs a finite gamma", "gamma")
    if mode == EVERY_STEP:
        lo = 0.0
    elif mode == LAST_STEP_ONLY:
        lo = recurrent_bound(epsilon, T)
    else:
        raise ConfigError(f"unknown init mode {mode!r}", "mode")
    if input_weights:
        bound = glorot_bound(M, N)
        W = rng.uniform(-bound, bound, size=(N, M))
    else:
        if M != N:
            raise ShapeError(f"recurrent-only layer needs M == N, got {M} != {N}")
        W = None
    u = rng.uniform(lo, hi, size=N)
    return IndRnnLayer(W=W, u=u, b=np.zeros(N), activation=activation)


@njit(cache=True)
def _activate(a, act):
    if act == 0:
        return a if a > 0.0 else 0.0
    if act == 1:
        return np.tanh(a)
    return a


@njit(cache=True)
def _derivative(a, h, act):
    if act == 0:
        return 1.0 if a > 0.0 else 0.0
    if act == 1:
        return 1.0 - h * h
    return 1.0


@njit(cache=True)
def fused_step(z, u, h_prev, act, pre, out):
    """out = act(z + u * h_prev) over a B x N slab, recording pre-activations."""
    B, N = z.shape
    for i in range(B):
        for n in range(N):
            a = z[i, n] + u[n] * h_prev[i, n]
            pre[i, n] = a
            out[i, n] = _activate(a, act)


@njit(cache=True)
def fused_forward(z, u, act, pre, states):
    T, B, N = z.shape
    for t in range(T):
        for i in range(B):
            for n in range(N):
                a = z[t, i, n] + u[n] * states[t, i, n]
                pre[t, i, n] = a
                states[t + 1, i, n] = _activate(a, act)


@njit(cache=True)
def fused_backward(dh, u, pre, states, act, delta, du, carry):
    """Reverse-time accumulation.

    On entry ``carry`` is zero; on exit it holds u * delta_1, the gradient
    arriving at the initial state.
    """
    T, B, N = dh.shape
    for t in range(T - 1, -1, -1):
        for i in range(B):
            for n in range(N):
                d = (dh[t, i, n] + carry[i, n]) * _derivative(pre[t, i, n], states[t + 1, i, n], act)
                delta[t, i, n] = d
                du[n] += d * states[t, i, n]
                carry[i, n] = u[n] * d


def _check_seq(layer, X, h0):
    if X.ndim != 3 or X.shape[2] != layer.input_dim:
        raise ShapeError(f"expected T x B x {layer.input_dim} input, got {X.shape}")
    if h0 is not None and h0.shape != (X.shape[1], layer.hidden):
        raise ShapeError(f"initial state {h0.shape} != {(X.shape[1], layer.hidden)}")


def seq_matmul(x, W):
    """``x @ W`` for a T x B x M array as one 2-D product (much faster than batched)."""
    return (x.reshape(-1, x.shape[-1]) @ W).reshape(x.shape[:-1] + (W.shape[1],))


def input_drive(layer, X):
    """W x_t + b for every step at once (the non-recurrent part)."""
    z = seq_matmul(X, layer.W.T) if layer.W is not None else X.copy()
    z += layer.b
    return z


def run_recurrence(u, z, h0, activation):
    T, B, N = z.shape
    pre = np.empty_like(z)
    states = np.empty((T + 1, B, N))
    states[0] = 0.0 if h0 is None else h0
    fused_forward(z, u, _ACT_CODE[activation], pre, states)
    return pre, states


def forward_step(layer, x_t, h_prev):
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.ndim != 2 or x_t.shape[1] != layer.input_dim:
        raise ShapeError(f"x_t has shape {x_t.shape}, layer expects B x {layer.input_dim}")
    if h_prev.shape != (x_t.shape[0], layer.hidden):
        raise ShapeError(f"h_prev has shape {h_prev.shape}, expected {(x_t.shape[0], layer.hidden)}")
    z = x_t @ layer.W.T if layer.W is not None else x_t.copy()
    z += layer.b
    pre = np.empty_like(z)
    out = np.empty_like(z)
    fused_step(z, layer.u, h_prev, _ACT_CODE[layer.activation], pre, out)
    return out


def forward_sequence(layer, X, h0=None):
    """Returns ``(H, cache)`` with ``H[0] = h0`` and ``H[t]`` the state after step t."""
    X = np.asarray(X, dtype=np.float64)
    _check_seq(layer, X, h0)
    pre, states = run_recurrence(layer.u, input_drive(layer, X), h0, layer.activation)
    return states, ForwardCache(inputs=X, preacts=pre, states=states)


def recurrence_backward(u, pre, states, dH, activation):
    """Gradients of the recurrence w.r.t. its drive z, u and h0."""
    delta = np.empty_like(dH)
    du = np.zeros(u.shape[0])
    carry = np.zeros(dH.shape[1:])
    fused_backward(dH, u, pre, states, _ACT_CODE[activation], delta, du, carry)
    return delta, du, carry


def backward_sequence(layer, cache, dH):
    """``dH[k]`` is the gradient arriving at ``H[k+1]`` from above or from the loss."""
    dH = np.asarray(dH, dtype=np.float64)
    if dH.shape != cache.preacts.shape:
        raise ShapeError(f"dH has shape {dH.shape}, expected {cache.preacts.shape}")
    delta, du, dH0 = recurrence_backward(layer.u, cache.preacts, cache.states, dH,
                                         layer.activation)
    db = delta.sum(axis=(0, 1))
    if layer.W is not None:
        N, M = layer.W.shape
        dW = delta.reshape(-1, N).T @ cache.inputs.reshape(-1, M)
        dX = seq_matmul(delta, layer.W)
    else:
        dW = None
        dX = delta
    return LayerGrads(dW=dW, du=du, db=db, dX=dX, dH0=dH0)


def grad_wrt_past_state(u_n, sigma_prime_trace):
    """u_n^(T-t) times the product of activation derivatives along the path."""
    trace = np.asarray(sigma_prime_trace, dtype=np.float64)
    return float(u_n) ** trace.size * float(np.prod(trace))


def clamp_recurrent(layer, gamma, T):
    bound = recurrent_bound(gamma, T)
    if np.isfinite(bound):
        np.clip(layer.u, -bound, bound, out=layer.u)


def param_count(layer):
    N = layer.hidden
    return (layer.W.size if layer.W is not None else 0) + 2 * N
