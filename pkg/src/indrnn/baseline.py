"""Minimal vanilla RNN cell, h_t = tanh(W x_t + U h_{t-1} + b), used as the comparison baseline."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError
from .layer import seq_matmul
from .numerics import glorot_bound


@dataclass
class VanillaRnnLayer:
    W: Optional[np.ndarray]  # N x M, None when the input projection is a separate node
    U: np.ndarray            # N x N
    b: np.ndarray

    @property
    def hidden(self):
        return self.U.shape[0]

    @property
    def input_dim(self):
        return self.hidden if self.W is None else self.W.shape[1]


def scaled_orthogonal(rng, N, radius):
    q, r = np.linalg.qr(rng.normal((N, N)))
    q *= np.sign(np.diag(r))
    return radius * q


def init_vanilla(M, N, rng, radius=0.9, input_weights=True):
    """Glorot-uniform input weights; recurrent matrix orthogonal scaled to ``radius``."""
    W = None
    if input_weights:
        bound = glorot_bound(M, N)
        W = rng.uniform(-bound, bound, size=(N, M))
    elif M != N:
        raise ShapeError(f"recurrent-only layer needs M == N, got {M} != {N}")
    return VanillaRnnLayer(W=W, U=scaled_orthogonal(rng, N, radius), b=np.zeros(N))


def vanilla_recurrence(U, z, h0=None):
    T, B, N = z.shape
    states = np.empty((T + 1, B, N))
    states[0] = 0.0 if h0 is None else h0
    Ut = U.T
    for t in range(T):
        a = states[t] @ Ut
        a += z[t]
        np.tanh(a, out=states[t + 1])
    return states


def vanilla_recurrence_backward(U, states, dH):
    """Returns (delta, dU, dh0) with delta the gradient at the pre-activations."""
    T = dH.shape[0]
    delta = np.empty_like(dH)
    dU = np.zeros_like(U)
    carry = np.zeros(dH.shape[1:])
    for t in range(T - 1, -1, -1):
        h = states[t + 1]
        d = (dH[t] + carry) * (1.0 - h * h)
        delta[t] = d
        dU += d.T @ states[t]
        carry = d @ U
    return delta, dU, carry


def vanilla_forward(layer, X, h0=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != layer.input_dim:
        raise ShapeError(f"expected T x B x {layer.input_dim} input, got {X.shape}")
    z = seq_matmul(X, layer.W.T) if layer.W is not None else X.copy()
    z += layer.b
    return vanilla_recurrence(layer.U, z, h0)


def vanilla_param_count(layer):
    return (0 if layer.W is None else layer.W.size) + layer.U.size + layer.b.size
