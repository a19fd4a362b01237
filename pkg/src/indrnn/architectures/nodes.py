"""Graph nodes. Every node maps a T x B x F sequence to a T x B x F' sequence.

``forward(x, ctx)`` returns ``(y, cache)``; ``backward(dy, cache, grads)``
accumulates parameter gradients into ``grads`` (keyed ``"<node>.<param>"``)
and returns the gradient w.r.t. ``x``.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from ..baseline import vanilla_recurrence, vanilla_recurrence_backward
from ..errors import ConfigError, ShapeError
from ..layer import recurrence_backward, run_recurrence, seq_matmul
from ..numerics import Rng, glorot_bound

ALL_STEPS = "all_steps"
PER_STEP = "per_step"


@dataclass
class Context:
    train: bool
    rng: Optional[Rng] = None
    kinks: Optional[list] = None
    initial_states: dict = field(default_factory=dict)
    final_states: dict = field(default_factory=dict)


def _accumulate(grads, key, value):
    if key in grads:
        grads[key] += value
    else:
        grads[key] = value


class Node:
    decay = ()

    def __init__(self, name):
        self.name = name

    def children(self):
        return ()

    def params(self):
        return {}

    def buffers(self):
        return {}

    def walk(self):
        yield self
        for child in self.children():
            yield from child.walk()

    def forward(self, x, ctx):
        raise NotImplementedError

    def backward(self, dy, cache, grads):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Affine(Node):
    """The "Weight" box: y = x W^T (+ c), shared over time."""

    decay = ("W",)

    def __init__(self, name, n_in, n_out, rng, bias=True):
        super().__init__(name)
        bound = glorot_bound(n_in, n_out)
        self.W = rng.uniform(-bound, bound, size=(n_out, n_in))
        self.c = np.zeros(n_out) if bias else None
        self.n_in, self.n_out = n_in, n_out

    def params(self):
        p = {"W": self.W}
        if self.c is not None:
            p["c"] = self.c
        return p

    def forward(self, x, ctx):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"{self.name}: expected width {self.n_in}, got {x.shape[-1]}")
        y = seq_matmul(x, self.W.T)
        if self.c is not None:
            y += self.c
        return y, x

    def backward(self, dy, x, grads):
        flat_dy = dy.reshape(-1, self.n_out)
        _accumulate(grads, f"{self.name}.W", flat_dy.T @ x.reshape(-1, self.n_in))
        if self.c is not None:
            _accumulate(grads, f"{self.name}.c", flat_dy.sum(axis=0))
        return seq_matmul(dy, self.W)


class Embedding(Node):
    decay = ("table",)

    def __init__(self, name, vocab, width, rng):
        super().__init__(name)
        self.table = rng.uniform(-0.1, 0.1, size=(vocab, width))

    def params(self):
        return {"table": self.table}

    def forward(self, ids, ctx):
        ids = np.asarray(ids)
        if ids.ndim != 2 or not np.issubdtype(ids.dtype, np.integer):
            raise ShapeError(f"{self.name}: expected T x B integer ids, got {ids.shape} {ids.dtype}")
        return self.table[ids], ids

    def backward(self, dy, ids, grads):
        d = np.zeros_like(self.table)
        np.add.at(d, ids.reshape(-1), dy.reshape(-1, self.table.shape[1]))
        _accumulate(grads, f"{self.name}.table", d)
        return None


class BatchNorm(Node):
    """Feature-wise normalization over all T x B samples or over B at each step."""

    def __init__(self, name, width, policy=ALL_STEPS, steps=1, momentum=0.9, eps=1e-5):
        super().__init__(name)
        if policy not in (ALL_STEPS, PER_STEP):
            raise ConfigError(f"unknown BN policy {policy!r}", "bn_policy")
        self.policy = policy
        self.momentum, self.eps = momentum, eps
        self.scale = np.ones(width)
        self.shift = np.zeros(width)
        sets = steps if policy == PER_STEP else 1
        self.running_mean = np.zeros((sets, width))
        self.running_var = np.ones((sets, width))

    def params(self):
        return {"scale": self.scale, "shift": self.shift}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def _groups(self, a):
        # (groups, rows, features): one group over all T x B rows, or one per step
        return a.reshape(1, -1, a.shape[-1]) if self.policy == ALL_STEPS else a

    def forward(self, x, ctx):
        if x.shape[-1] != self.scale.shape[0]:
            raise ShapeError(f"{self.name}: expected width {self.scale.shape[0]}, got {x.shape[-1]}")
        x = np.ascontiguousarray(x, dtype=np.float64)
        T, N = x.shape[0], x.shape[-1]
        xg = self._groups(x)
        if ctx.train:
            mean = np.empty((xg.shape[0], N))
            var = np.empty((xg.shape[0], N))
            _bn_stats(xg, mean, var)
            m = self.momentum
            k = min(mean.shape[0], self.running_mean.shape[0])
            self.running_mean[:k] = m * self.running_mean[:k] + (1 - m) * mean[:k]
            self.running_var[:k] = m * self.running_var[:k] + (1 - m) * var[:k]
        elif self.policy == ALL_STEPS:
            mean, var = self.running_mean, self.running_var
        else:
            idx = np.minimum(np.arange(T), self.running_mean.shape[0] - 1)
            mean, var = self.running_mean[idx], self.running_var[idx]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = np.empty_like(x)
        y = np.empty_like(x)
        _bn_apply(xg, mean, inv_std, self.scale, self.shift, self._groups(xhat), self._groups(y))
        return y, (xhat, inv_std, ctx.train)

    def backward(self, dy, cache, grads):
        xhat, inv_std, batch_stats = cache
        dy = np.ascontiguousarray(dy, dtype=np.float64)
        N = dy.shape[-1]
        dx = np.empty_like(dy)
        dscale, dshift = np.zeros(N), np.zeros(N)
        _bn_backward(self._groups(dy), self._groups(xhat), inv_std, self.scale, batch_stats,
                     self._groups(dx), dscale, dshift)
        _accumulate(grads, f"{self.name}.scale", dscale)
        _accumulate(grads, f"{self.name}.shift", dshift)
        return dx


@njit(cache=True)
def _bn_stats(x, mean, var):
    G, R, N = x.shape
    for g in range(G):
        for n in range(N):
            mean[g, n] = 0.0
            var[g, n] = 0.0
        for r in range(R):
            for n in range(N):
                mean[g, n] += x[g, r, n]
        for n in range(N):
            mean[g, n] /= R
        for r in range(R):
            for n in range(N):
                d = x[g, r, n] - mean[g, n]
                var[g, n] += d * d
        for n in range(N):
            var[g, n] /= R


@njit(cache=True)
def _bn_apply(x, mean, inv_std, scale, shift, xhat, y):
    G, R, N = x.shape
    for g in range(G):
        for r in range(R):
            for n in range(N):
                h = (x[g, r, n] - mean[g, n]) * inv_std[g, n]
                xhat[g, r, n] = h
                y[g, r, n] = scale[n] * h + shift[n]


@njit(cache=True)
def _bn_backward(dy, xhat, inv_std, scale, batch_stats, dx, dscale, dshift):
    G, R, N = dy.shape
    s1 = np.zeros(N)
    s2 = np.zeros(N)
    for g in range(G):
        s1[:] = 0.0
        s2[:] = 0.0
        for r in range(R):
            for n in range(N):
                d = dy[g, r, n]
                dscale[n] += d * xhat[g, r, n]
                dshift[n] += d
                s1[n] += d * scale[n]
                s2[n] += d * scale[n] * xhat[g, r, n]
        for r in range(R):
            for n in range(N):
                dxhat = dy[g, r, n] * scale[n]
                if batch_stats:
                    dxhat -= (s1[n] + xhat[g, r, n] * s2[n]) / R
                dx[g, r, n] = inv_std[g, n] * dxhat


def dropout_mask(rng, p, B, N):
    """Inverted-dropout mask, sampled once and reused at every time step."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}", "dropout")
    if p == 0.0:
        return np.ones((B, N))
    keep = rng.random((B, N)) >= p
    return keep / (1.0 - p)


class Dropout(Node):
    def __init__(self, name, p):
        super().__init__(name)
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout probability must be in [0, 1), got {p}", "dropout")
        self.p = p

    def forward(self, x, ctx):
        if not ctx.train or self.p == 0.0:
            return x, None
        mask = dropout_mask(ctx.rng, self.p, x.shape[1], x.shape[2])
        return x * mask, mask

    def backward(self, dy, mask, grads):
        return dy if mask is None else dy * mask


class Activation(Node):
    def __init__(self, name, kind="relu"):
        super().__init__(name)
        if kind not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {kind!r}", "activation")
        self.kind = kind

    def forward(self, x, ctx):
        if self.kind == "relu":
            if ctx.kinks is not None:
                ctx.kinks.append(x > 0)
            y = np.maximum(x, 0.0)
        else:
            y = np.tanh(x)
        return y, (x, y)

    def backward(self, dy, cache, grads):
        x, y = cache
        if self.kind == "relu":
            return dy * (x > 0)
        return dy * (1.0 - y * y)


class IndRec(Node):
    """IndRec+act box wrapping an :class:`~indrnn.layer.IndRnnLayer`."""

    decay = ("W",)

    def __init__(self, name, layer):
        super().__init__(name)
        self.layer = layer

    def params(self):
        p = {"u": self.layer.u, "b": self.layer.b}
        if self.layer.W is not None:
            p["W"] = self.layer.W
        return p

    def forward(self, x, ctx):
        layer = self.layer
        if x.shape[-1] != layer.input_dim:
            raise ShapeError(f"{self.name}: expected width {layer.input_dim}, got {x.shape[-1]}")
        z = seq_matmul(x, layer.W.T) if layer.W is not None else x.copy()
        z += layer.b
        h0 = ctx.initial_states.get(self.name)
        pre, states = run_recurrence(layer.u, z, h0, layer.activation)
        ctx.final_states[self.name] = states[-1]
        if ctx.kinks is not None and layer.activation == "relu":
            ctx.kinks.append(pre > 0)
        return states[1:], (x, pre, states)

    def backward(self, dy, cache, grads):
        x, pre, states = cache
        layer = self.layer
        delta, du, _ = recurrence_backward(layer.u, pre, states, dy, layer.activation)
        _accumulate(grads, f"{self.name}.u", du)
        _accumulate(grads, f"{self.name}.b", delta.sum(axis=(0, 1)))
        if layer.W is None:
            return delta
        N, M = layer.W.shape
        _accumulate(grads, f"{self.name}.W", delta.reshape(-1, N).T @ x.reshape(-1, M))
        return seq_matmul(delta, layer.W)


class VanillaRec(Node):
    """tanh recurrence with a full recurrent matrix (baseline only)."""

    decay = ("W",)

    def __init__(self, name, layer):
        super().__init__(name)
        self.layer = layer

    def params(self):
        p = {"U": self.layer.U, "b": self.layer.b}
        if self.layer.W is not None:
            p["W"] = self.layer.W
        return p

    def forward(self, x, ctx):
        layer = self.layer
        if x.shape[-1] != layer.input_dim:
            raise ShapeError(f"{self.name}: expected width {layer.input_dim}, got {x.shape[-1]}")
        z = seq_matmul(x, layer.W.T) if layer.W is not None else x.copy()
        z += layer.b
        states = vanilla_recurrence(layer.U, z, ctx.initial_states.get(self.name))
        ctx.final_states[self.name] = states[-1]
        return states[1:], (x, states)

    def backward(self, dy, cache, grads):
        x, states = cache
        layer = self.layer
        delta, dU, _ = vanilla_recurrence_backward(layer.U, states, dy)
        _accumulate(grads, f"{self.name}.U", dU)
        _accumulate(grads, f"{self.name}.b", delta.sum(axis=(0, 1)))
        if layer.W is None:
            return delta
        N, M = layer.W.shape
        _accumulate(grads, f"{self.name}.W", delta.reshape(-1, N).T @ x.reshape(-1, M))
        return seq_matmul(delta, layer.W)


class Sequential(Node):
    def __init__(self, name, nodes):
        super().__init__(name)
        self.nodes = list(nodes)

    def children(self):
        return self.nodes

    def forward(self, x, ctx):
        caches = []
        for node in self.nodes:
            x, cache = node.forward(x, ctx)
            caches.append(cache)
        return x, caches

    def backward(self, dy, caches, grads):
        for node, cache in zip(reversed(self.nodes), reversed(caches)):
            dy = node.backward(dy, cache, grads)
        return dy


class Add:
    """Sum of two branches; backward hands the same gradient to both."""

    @staticmethod
    def forward(a, b):
        return a + b

    @staticmethod
    def backward(dy):
        return dy, dy


class Concat:
    """Feature-axis concatenation; backward splits the gradient at the seam."""

    @staticmethod
    def forward(a, b):
        return np.concatenate([a, b], axis=-1)

    @staticmethod
    def backward(dy, width_a):
        return dy[..., :width_a], dy[..., width_a:]


class Residual(Node):
    """x + F(x) with an identity shortcut."""

    def __init__(self, name, body):
        super().__init__(name)
        self.body = body

    def children(self):
        return (self.body,)

    def forward(self, x, ctx):
        fx, cache = self.body.forward(x, ctx)
        if fx.shape != x.shape:
            raise ShapeError(f"{self.name}: residual branch {fx.shape} vs shortcut {x.shape}")
        return Add.forward(x, fx), cache

    def backward(self, dy, cache, grads):
        d_short, d_branch = Add.backward(dy)
        return d_short + self.body.backward(d_branch, cache, grads)


class DenseUnit(Node):
    """concat(x, F(x)): appends F's features to its input."""

    def __init__(self, name, body):
        super().__init__(name)
        self.body = body

    def children(self):
        return (self.body,)

    def forward(self, x, ctx):
        fx, cache = self.body.forward(x, ctx)
        return Concat.forward(x, fx), (x.shape[-1], cache)

    def backward(self, dy, cache, grads):
        width, body_cache = cache
        d_short, d_branch = Concat.backward(dy, width)
        return d_short + self.body.backward(d_branch, body_cache, grads)


class SelectLast(Node):
    """Keep only the final time step (T x B x F -> B x F)."""

    def forward(self, x, ctx):
        return x[-1], x.shape

    def backward(self, dy, shape, grads):
        dx = np.zeros(shape)
        dx[-1] = dy
        return dx


def transition_width(n):
    return math.ceil(n / 2)
