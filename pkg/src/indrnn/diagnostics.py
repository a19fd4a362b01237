"""Gradient-flow traces, recurrent-weight histograms, memory classification and
the construction that rewrites a linear RNN as a two-layer linear IndRNN."""
from dataclasses import dataclass, field

import numpy as np

from .architectures import network_backward, network_forward
from .errors import ConfigError, NotRepresentableError, ShapeError
from .layer import IndRnnLayer, forward_sequence

LONG = "long"
SHORT = "short"


@dataclass
class GradientTrace:
    over_time: np.ndarray   # T
    over_depth: np.ndarray  # L
    layer_names: list = field(default_factory=list)
    batches: int = 0


def record_gradient_flow(net, batches, loss_fn, max_batches=None):
    """Average input-gradient norms per step and input-weight gradient
    magnitudes per recurrent layer over ``batches`` (an iterable of
    ``(X, target)`` pairs).

    Runs in inference mode so neither dropout nor BN running statistics are
    touched; the network is left exactly as it was.
    """
    over_time = over_depth = None
    names = []
    count = 0
    for X, target in batches:
        if max_batches is not None and count >= max_batches:
            break
        Y, tape = network_forward(net, X, False)
        lv = loss_fn(Y, target)
        g = network_backward(net, tape, lv.grad)
        if g.dX is None:
            raise ShapeError("gradient flow needs continuous inputs (no embedding)")
        per_t = np.sqrt((g.dX ** 2).sum(axis=2)).mean(axis=1)
        weights = net.input_weights()
        names = [n for n, _ in weights]
        depth = np.array([_weight_grad_mean(net, g.params, n, W) for n, W in weights])
        if over_time is None:
            over_time, over_depth = per_t, depth
        else:
            over_time = over_time + per_t
            over_depth = over_depth + depth
        count += 1
    if count == 0:
        raise ConfigError("record_gradient_flow needs at least one batch", "batches")
    return GradientTrace(over_time / count, over_depth / count, names, count)


def _weight_grad_mean(net, grads, layer_name, W):
    for key, p in net.parameters().items():
        if p is W:
            return float(np.abs(grads[key]).mean())
    raise KeyError(f"no parameter entry for the input weight of {layer_name}")


def weight_histogram(u, bins, range):
    """Equal-width histogram of recurrent weights; values outside ``range`` go
    into the edge bins. The last bin is closed on the right."""
    u = np.asarray(getattr(u, "u", u), dtype=np.float64).ravel()
    lo, hi = range
    if bins < 1:
        raise ConfigError("bins must be >= 1", "bins")
    if not lo < hi:
        raise ConfigError(f"histogram range needs lo < hi, got ({lo}, {hi})", "range")
    counts, edges = np.histogram(np.clip(u, lo, hi), bins=bins, range=(lo, hi))
    return counts, edges


def classify_memory(u_n, horizon, epsilon, sigma_prime=1.0):
    """Long when the gradient surviving ``horizon`` steps exceeds ``epsilon``."""
    if horizon < 1:
        raise ConfigError("horizon must be >= 1", "horizon")
    if not 0.0 < epsilon < 1.0:
        raise ConfigError("epsilon must lie in (0, 1)", "epsilon")
    if not 0.0 < sigma_prime <= 1.0:
        raise ConfigError("sigma_prime must lie in (0, 1]", "sigma_prime")
    return LONG if (abs(u_n) * sigma_prime) ** horizon > epsilon else SHORT


@dataclass
class MemoryReport:
    u: np.ndarray
    horizon: int
    epsilon: float
    classes: list
    n_long: int
    n_short: int
    n_negative: int
    n_zero: int
    n_positive: int


def memory_report(u, horizon, epsilon, sigma_prime=1.0):
    u = np.asarray(getattr(u, "u", u), dtype=np.float64).ravel()
    classes = [classify_memory(x, horizon, epsilon, sigma_prime) for x in u]
    n_long = sum(c == LONG for c in classes)
    return MemoryReport(u=u.copy(), horizon=horizon, epsilon=epsilon, classes=classes,
                        n_long=n_long, n_short=len(classes) - n_long,
                        n_negative=int((u < 0).sum()), n_zero=int((u == 0).sum()),
                        n_positive=int((u > 0).sum()))


@dataclass
class LinearRnn:
    """h_t = W x_t + U h_{t-1}, no bias and no nonlinearity."""
    U: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=np.float64)
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.U.ndim != 2 or self.U.shape[0] != self.U.shape[1]:
            raise ShapeError(f"U must be square, got {self.U.shape}")
        if self.W.ndim != 2 or self.W.shape[0] != self.U.shape[0]:
            raise ShapeError(f"W must be {self.U.shape[0]} x M, got {self.W.shape}")


@dataclass
class EquivalentPair:
    rec: IndRnnLayer     # linear IndRNN layer with u_f and W_f
    W_s: np.ndarray      # second-layer weight mapping h_f back to h
    condition: float


def rnn_to_indrnn(rnn, cond_bound=1e6, imag_tol=1e-12):
    """Diagonalize U = S diag(lam) S^-1 and return the IndRNN pair
    (u_f = lam, W_f = S^-1 W) with readout W_s = S.

    Rejects complex spectra and eigenvector bases whose condition number
    exceeds ``cond_bound`` (which covers defective matrices).
    """
    U, W = rnn.U, rnn.W
    N = U.shape[0]
    if np.count_nonzero(U - np.diag(np.diag(U))) == 0:
        lam, S, S_inv, cond = np.diag(U).copy(), np.eye(N), np.eye(N), 1.0
    else:
        if np.array_equal(U, U.T):
            lam, S = np.linalg.eigh(U)
            S_inv = S.T
            cond = 1.0
        else:
            lam, S = np.linalg.eig(U)
            scale = max(1.0, float(np.abs(lam).max()))
            if np.abs(lam.imag).max() > imag_tol * scale:
                raise NotRepresentableError("U has complex eigenvalues; no real diagonal form exists")
            lam, S = lam.real, S.real
            cond = float(np.linalg.cond(S))
            if not np.isfinite(cond) or cond > cond_bound:
                raise NotRepresentableError(
                    f"eigenvector basis condition number {cond:.3g} exceeds {cond_bound:.3g}"
                    " (U is defective or nearly so)")
            S_inv = np.linalg.inv(S)
    layer = IndRnnLayer(W=S_inv @ W, u=np.ascontiguousarray(lam), b=np.zeros(N),
                        activation="identity")
    return EquivalentPair(rec=layer, W_s=S, condition=cond)


def linear_rnn_states(rnn, X, steps=None):
    X = np.asarray(X, dtype=np.float64)
    steps = X.shape[0] if steps is None else steps
    T, B, _ = X.shape
    h = np.zeros((B, rnn.U.shape[0]))
    out = np.empty((steps, B, rnn.U.shape[0]))
    for t in range(steps):
        h = X[t] @ rnn.W.T + h @ rnn.U.T
        out[t] = h
    return out


def verify_equivalence(rnn, pair, X, steps=None):
    """Max over (t, batch, neuron) of |h_rnn - W_s h_f|, both started from zero."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ShapeError(f"expected T x B x M input, got {X.shape}")
    steps = X.shape[0] if steps is None else steps
    if steps > X.shape[0]:
        raise ShapeError(f"{steps} steps requested but input has {X.shape[0]}")
    ref = linear_rnn_states(rnn, X, steps)
    H, _ = forward_sequence(pair.rec, X[:steps])
    mapped = H[1:] @ pair.W_s.T
    return float(np.abs(ref - mapped).max())
