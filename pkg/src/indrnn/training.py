"""Losses, Adam, learning-rate schedules, selective weight decay and the
finite-difference gradient oracle."""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .architectures import network_backward, network_forward
from .errors import ConfigError, NonFiniteGradientError, ShapeError
from .numerics import Rng, seed_rng

LN2 = math.log(2.0)


@dataclass
class LossValue:
    loss: float
    grad: np.ndarray


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    flat = pred.reshape(-1)
    if flat.size == 0:
        raise ShapeError("mse_loss on an empty batch")
    if flat.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = flat - target
    return LossValue(float(np.mean(diff * diff)), (2.0 * diff / flat.size).reshape(pred.shape))


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits, labels):
    """Mean softmax cross-entropy (nats) over every leading position."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    V = logits.shape[-1]
    flat = logits.reshape(-1, V)
    lab = labels.reshape(-1)
    if lab.shape[0] != flat.shape[0]:
        raise ShapeError(f"{flat.shape[0]} logit rows but {lab.shape[0]} labels")
    if lab.size == 0:
        raise ShapeError("cross_entropy_loss on an empty batch")
    if lab.min() < 0 or lab.max() >= V:
        raise ConfigError(f"label outside [0, {V})", "labels")
    z = flat - flat.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(lab.size)
    loss = float(np.mean(logsum - z[rows, lab]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, lab] -= 1.0
    grad /= lab.size
    return LossValue(loss, grad.reshape(logits.shape))


def bits_per_char(loss_nats):
    return loss_nats / LN2


def accuracy(logits, labels):
    return float(np.mean(np.argmax(logits, axis=-1) == np.asarray(labels)))


@dataclass
class PlateauState:
    patience: int = 100
    factor: float = 5.0
    best: Optional[float] = None
    counter: int = 0


@dataclass
class TrainState:
    params: dict
    adam_m: dict
    adam_v: dict
    lr: float
    step: int = 0
    plateau: PlateauState = field(default_factory=PlateauState)
    rng: Optional[Rng] = None
    net: object = None

    @classmethod
    def create(cls, net, lr, rng=None, patience=100, factor=5.0):
        if not lr > 0:
            raise ConfigError("learning rate must be positive", "lr")
        params = net.parameters()
        return cls(params=params,
                   adam_m={k: np.zeros_like(v) for k, v in params.items()},
                   adam_v={k: np.zeros_like(v) for k, v in params.items()},
                   lr=lr, plateau=PlateauState(patience=patience, factor=factor),
                   rng=rng, net=net)


def check_finite(grads):
    for name, g in grads.items():
        bad = ~np.isfinite(g)
        if bad.any():
            raise NonFiniteGradientError(name, int(bad.sum()))


def adam_step(state, grads, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam, applied in place to ``state.params``."""
    check_finite(grads)
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name, p in state.params.items():
        g = grads[name]
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + eps)
    if state.net is not None:
        state.net.touch()


def apply_weight_decay(net, grads, lam):
    """Add lam * theta to the gradients of weight matrices only (never u, b, BN)."""
    if lam < 0:
        raise ConfigError("weight decay must be non-negative", "weight_decay")
    if lam == 0:
        return
    params = net.parameters()
    for name in net.decayable():
        grads[name] += lam * params[name]


def plateau_update(state, metric, higher_is_better):
    """Returns ``"reduced"`` when the lr was divided by the plateau factor, else ``"kept"``."""
    pl = state.plateau
    improved = pl.best is None or (metric > pl.best if higher_is_better else metric < pl.best)
    if improved:
        pl.best = metric
        pl.counter = 0
        return "kept"
    pl.counter += 1
    if pl.counter >= pl.patience:
        state.lr /= pl.factor
        pl.counter = 0
        return "reduced"
    return "kept"


def step_decay_update(state, every, factor):
    """Divide the lr by ``factor`` each time the step counter crosses a multiple of ``every``."""
    if every > 0 and state.step > 0 and state.step % every == 0:
        state.lr /= factor
        return "reduced"
    return "kept"


def train_step(net, state, X, target, loss_fn, rng, weight_decay=0.0, initial_states=None):
    """One iteration: forward, loss, backward, weight decay, Adam, clamp.

    Returns ``(loss_value, outputs, tape)``.
    """
    Y, tape = network_forward(net, X, True, rng, initial_states=initial_states)
    lv = loss_fn(Y, target)
    if not math.isfinite(lv.loss):
        raise FloatingPointError(f"non-finite loss {lv.loss} at step {state.step}")
    grads = network_backward(net, tape, lv.grad).params
    apply_weight_decay(net, grads, weight_decay)
    adam_step(state, grads)
    net.clamp()
    return lv, Y, tape


@dataclass
class FdResult:
    max_rel_error: float
    worst: Optional[tuple]
    checked: int
    excluded: list


def finite_difference_check(net, batch, loss_fn, step=1e-5, seed=0, floor=1e-8, order=4):
    """Compare analytic gradients with central differences on every parameter,
    in train mode with fixed dropout masks.

    ``order=2`` is the plain two-point difference; ``order=4`` (default) uses
    the five-point stencil, whose O(step^4) truncation error stays negligible
    on strongly curved coordinates (batch norm over small batches) where the
    two-point rule's O(step^2) term does not.
    Coordinates whose perturbation flips any ReLU gate are reported in
    ``excluded`` rather than counted as errors. The relative error is
    ``|analytic - numeric| / max(|numeric|, floor)``.
    """
    if order not in (2, 4):
        raise ConfigError("finite-difference order must be 2 or 4", "order")
    X, target = batch

    def evaluate():
        return network_forward(net, X, True, seed_rng(seed), track_kinks=True)

    Y, tape = evaluate()
    base_kinks = tape.context.kinks
    lv = loss_fn(Y, target)
    analytic = network_backward(net, tape, lv.grad).params

    def perturbed(p, idx, delta):
        old = p[idx]
        p[idx] = old + delta
        Yp, tp = evaluate()
        p[idx] = old
        same = all(np.array_equal(a, b) for a, b in zip(base_kinks, tp.context.kinks))
        return loss_fn(Yp, target).loss, same

    offsets = (1, -1) if order == 2 else (1, -1, 2, -2)
    worst, worst_at, checked, excluded = 0.0, None, 0, []
    for name, p in net.parameters().items():
        for idx in np.ndindex(p.shape):
            vals, same = {}, True
            for k in offsets:
                vals[k], ok = perturbed(p, idx, k * step)
                same = same and ok
            if not same:
                excluded.append((name, idx))
                continue
            if order == 2:
                fd = (vals[1] - vals[-1]) / (2.0 * step)
            else:
                fd = (8.0 * (vals[1] - vals[-1]) - (vals[2] - vals[-2])) / (12.0 * step)
            a = analytic[name][idx]
            err = abs(a - fd) / max(abs(fd), floor)
            checked += 1
            if err > worst:
                worst, worst_at = err, (name, idx)
    return FdResult(float(worst), worst_at, checked, excluded)
