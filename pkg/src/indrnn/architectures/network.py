"""Declarative network specs and the stacked / residual / dense builders."""
import itertools
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..baseline import init_vanilla
from ..errors import ConfigError, ShapeError, StaleCacheError
from ..layer import EVERY_STEP, LAST_STEP_ONLY, clamp_recurrent, init_layer
from .nodes import (
    ALL_STEPS,
    PER_STEP,
    Activation,
    Affine,
    BatchNorm,
    Context,
    DenseUnit,
    Dropout,
    Embedding,
    IndRec,
    Residual,
    SelectLast,
    Sequential,
    VanillaRec,
    transition_width,
)

KINDS = ("stacked", "residual", "dense")
# Weight -> BN -> IndRec, IndRec(with weight) -> BN, and the pre-activation BN -> IndRec -> Weight
COMPOSITES = ("weight-bn-rec", "weight-rec-bn", "bn-rec-weight")
DEFAULT_COMPOSITE = {"stacked": "weight-bn-rec", "residual": "bn-rec-weight",
                     "dense": "weight-bn-rec"}

LAST_STEP = "last_step"
EVERY_STEP_OUTPUT = "every_step"


@dataclass
class Dropouts:
    layer: float = 0.1
    input: float = 0.2
    dense: float = 0.2
    bottleneck: float = 0.1
    transition: float = 0.1

    @classmethod
    def none(cls):
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass
class NetworkSpec:
    kind: str = "stacked"
    layers: int = 2
    hidden: int = 128
    growth_rate: int = 16
    block_config: tuple = (8, 6, 4)
    input_dim: int = 1
    output_dim: int = 10
    output_mode: str = LAST_STEP
    dropout: Dropouts = field(default_factory=Dropouts)
    batch_norm: bool = True
    bn_policy: str = ALL_STEPS
    gamma: float = 2.0
    seq_len_hint: int = 100
    epsilon: float = 0.01
    init_gamma: Optional[float] = None
    activation: str = "relu"
    cell: str = "indrnn"
    composite: Optional[str] = None
    embedding_dim: Optional[int] = None
    vanilla_radius: float = 0.9
    # recurrent init of the last layer: "auto" picks last_step_only when only the
    # final step is read out, every_step otherwise
    last_layer_init: str = "auto"

    def resolved_composite(self):
        return self.composite or DEFAULT_COMPOSITE[self.kind]

    def resolved_init_gamma(self):
        if self.init_gamma is not None:
            return self.init_gamma
        return self.gamma if np.isfinite(self.gamma) else 1.0

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown network kind {self.kind!r}", "kind")
        if self.cell not in ("indrnn", "vanilla"):
            raise ConfigError(f"unknown cell {self.cell!r}", "cell")
        if self.cell == "vanilla" and self.kind != "stacked":
            raise ConfigError("the vanilla baseline cell only supports stacked networks", "cell")
        if self.resolved_composite() not in COMPOSITES:
            raise ConfigError(f"unknown composite ordering {self.composite!r}", "composite")
        if self.output_mode not in (LAST_STEP, EVERY_STEP_OUTPUT):
            raise ConfigError(f"unknown output mode {self.output_mode!r}", "output_mode")
        if self.bn_policy not in (ALL_STEPS, PER_STEP):
            raise ConfigError(f"unknown BN policy {self.bn_policy!r}", "bn_policy")
        for key in ("layers", "hidden", "input_dim", "output_dim", "seq_len_hint"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1", key)
        if self.kind != "residual" and self.resolved_composite() == "bn-rec-weight":
            raise ConfigError("bn-rec-weight ordering is only defined for residual blocks",
                              "composite")
        if self.kind == "dense":
            if self.growth_rate < 1 or not self.block_config or min(self.block_config) < 1:
                raise ConfigError("dense networks need growth_rate >= 1 and non-empty blocks",
                                  "block_config")
        for name, p in vars(self.dropout).items():
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"dropout.{name}={p} outside [0, 1)", f"dropout_{name}")
        if self.last_layer_init not in ("auto", EVERY_STEP, LAST_STEP_ONLY):
            raise ConfigError(f"unknown last_layer_init {self.last_layer_init!r}", "last_layer_init")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive", "gamma")
        if not 0 < self.epsilon < self.resolved_init_gamma():
            raise ConfigError("need 0 < epsilon < gamma", "epsilon")


@dataclass
class Tape:
    """Record of one forward pass, consumed by :func:`network_backward`."""

    cache: list
    net_id: int
    version: int
    input_shape: tuple
    context: Context


@dataclass
class NetworkGrads:
    params: dict
    dX: Optional[np.ndarray]


class Network:
    def __init__(self, spec, body, head):
        self.spec = spec
        self.body = body
        self.head = head
        self.version = 0

    def nodes(self):
        return itertools.chain(self.body.walk(), self.head.walk())

    def parameters(self):
        return {f"{n.name}.{k}": v for n in self.nodes() for k, v in n.params().items()}

    def buffers(self):
        return {f"{n.name}.{k}": v for n in self.nodes() for k, v in n.buffers().items()}

    def decayable(self):
        return {f"{n.name}.{k}" for n in self.nodes() for k in n.decay if k in n.params()}

    def recurrent_nodes(self):
        return [n for n in self.nodes() if isinstance(n, (IndRec, VanillaRec))]

    def input_weights(self):
        """(layer name, input-processing weight) per recurrent layer, in depth order.

        This is the weight fused into the recurrent layer, or the Affine node
        feeding it when the projection is a separate box.
        """
        out = []
        last_affine = None
        for n in self.body.walk():
            if isinstance(n, Affine):
                last_affine = n
            elif isinstance(n, (IndRec, VanillaRec)):
                if n.layer.W is not None:
                    out.append((n.name, n.layer.W))
                elif last_affine is not None:
                    out.append((n.name, last_affine.W))
                last_affine = None
        return out

    def touch(self):
        self.version += 1

    def clamp(self, gamma=None, T=None):
        gamma = self.spec.gamma if gamma is None else gamma
        T = self.spec.seq_len_hint if T is None else T
        for n in self.recurrent_nodes():
            if isinstance(n, IndRec):
                clamp_recurrent(n.layer, gamma, T)
        self.touch()


def param_count(net):
    return sum(v.size for v in net.parameters().values())


def _rec_layer(spec, name, n_in, n_out, rng, with_weight, last):
    if last and spec.last_layer_init == "auto":
        mode = LAST_STEP_ONLY if spec.output_mode == LAST_STEP else EVERY_STEP
    else:
        mode = LAST_STEP_ONLY if last and spec.last_layer_init == LAST_STEP_ONLY else EVERY_STEP
    if spec.cell == "vanilla":
        layer = init_vanilla(n_in, n_out, rng, radius=spec.vanilla_radius, input_weights=with_weight)
        return VanillaRec(name, layer)
    layer = init_layer(n_in, n_out, spec.seq_len_hint, rng, mode=mode,
                       gamma=spec.resolved_init_gamma(), epsilon=spec.epsilon,
                       activation=spec.activation, input_weights=with_weight)
    return IndRec(name, layer)


def _bn(spec, name, width):
    return BatchNorm(name, width, policy=spec.bn_policy, steps=spec.seq_len_hint)


def _weight_rec(spec, prefix, n_in, n_out, rng, last=False):
    """Forward-ordered composite: Weight-BN-IndRec, IndRec-BN, or a fused Weight+IndRec."""
    order = spec.resolved_composite()
    if spec.batch_norm and order == "weight-bn-rec":
        return [Affine(f"{prefix}.weight", n_in, n_out, rng, bias=False),
                _bn(spec, f"{prefix}.bn", n_out),
                _rec_layer(spec, f"{prefix}.rec", n_out, n_out, rng, False, last)]
    nodes = [_rec_layer(spec, f"{prefix}.rec", n_in, n_out, rng, True, last)]
    if spec.batch_norm and order == "weight-rec-bn":
        nodes.append(_bn(spec, f"{prefix}.bn", n_out))
    return nodes


def _input_nodes(spec, rng):
    if spec.embedding_dim:
        return [Embedding("embed", spec.input_dim, spec.embedding_dim, rng)], spec.embedding_dim
    return [], spec.input_dim


def _build_stacked(spec, rng):
    nodes, width = _input_nodes(spec, rng)
    for l in range(spec.layers):
        nodes += _weight_rec(spec, f"layer{l}", width, spec.hidden, rng, last=l == spec.layers - 1)
        if spec.dropout.layer > 0:
            nodes.append(Dropout(f"layer{l}.drop", spec.dropout.layer))
        width = spec.hidden
    return nodes, width


def _build_residual(spec, rng):
    N = spec.hidden
    nodes, width = _input_nodes(spec, rng)
    stem_order = "weight-bn-rec" if spec.resolved_composite() == "bn-rec-weight" else None
    stem_spec = spec if stem_order is None else replace(spec, composite=stem_order)
    nodes += _weight_rec(stem_spec, "stem", width, N, rng)
    for l in range(spec.layers):
        body = []
        for c in range(2):
            prefix = f"res{l}.f{c}"
            last = l == spec.layers - 1 and c == 1
            if spec.resolved_composite() == "bn-rec-weight":
                if spec.batch_norm:
                    body.append(_bn(spec, f"{prefix}.bn", N))
                body.append(_rec_layer(spec, f"{prefix}.rec", N, N, rng, False, last))
                # a bias feeding straight into the next BN would be redundant
                bias = c == 1 or not spec.batch_norm
                body.append(Affine(f"{prefix}.weight", N, N, rng, bias=bias))
            else:
                body += _weight_rec(spec, prefix, N, N, rng, last=last)
        nodes.append(Residual(f"res{l}", Sequential(f"res{l}.body", body)))
        if spec.dropout.layer > 0:
            nodes.append(Dropout(f"res{l}.drop", spec.dropout.layer))
    return nodes, N


def dense_widths(input_width, growth, block_config):
    """Feature widths through a dense network: (stem, [(block_in, block_out, transition_out)...])."""
    n = input_width
    blocks = []
    for layers in block_config:
        start = n
        n = n + layers * growth
        t = transition_width(n)
        blocks.append((start, n, t))
        n = t
    return blocks


def _build_dense(spec, rng):
    k = spec.growth_rate
    d = spec.dropout
    nodes, width = _input_nodes(spec, rng)
    last_block = len(spec.block_config) - 1
    nodes += _weight_rec(spec, "stem", width, 6 * k, rng)
    if d.input > 0:
        nodes.append(Dropout("stem.drop", d.input))
    n = 6 * k
    for bi, count in enumerate(spec.block_config):
        for li in range(count):
            prefix = f"block{bi}.layer{li}"
            last = bi == last_block and li == count - 1
            body = _weight_rec(spec, f"{prefix}.bottleneck", n, 4 * k, rng)
            if d.bottleneck > 0:
                body.append(Dropout(f"{prefix}.bottleneck.drop", d.bottleneck))
            body += _weight_rec(spec, f"{prefix}.out", 4 * k, k, rng, last=last)
            if d.dense > 0:
                body.append(Dropout(f"{prefix}.out.drop", d.dense))
            nodes.append(DenseUnit(prefix, Sequential(f"{prefix}.body", body)))
            n += k
        t = transition_width(n)
        prefix = f"trans{bi}"
        if spec.batch_norm:
            nodes += [Affine(f"{prefix}.weight", n, t, rng, bias=False), _bn(spec, f"{prefix}.bn", t)]
        else:
            nodes.append(Affine(f"{prefix}.weight", n, t, rng, bias=True))
        nodes.append(Activation(f"{prefix}.act", "tanh" if spec.activation == "tanh" else "relu"))
        if d.transition > 0:
            nodes.append(Dropout(f"{prefix}.drop", d.transition))
        n = t
    return nodes, n


_BUILDERS = {"stacked": _build_stacked, "residual": _build_residual, "dense": _build_dense}


def build_network(spec, rng):
    spec.validate()
    nodes, width = _BUILDERS[spec.kind](spec, rng)
    head_nodes = [Affine("readout", width, spec.output_dim, rng, bias=True)]
    if spec.output_mode == LAST_STEP:
        head_nodes.insert(0, SelectLast("last"))
    return Network(spec, Sequential("body", nodes), Sequential("head", head_nodes))


def network_forward(net, X, train_mode, rng=None, initial_states=None, track_kinks=False,
                    features=False):
    """Run the network on a T x B x input_dim batch (or T x B ids with an embedding).

    Returns ``(Y, tape)``; Y is B x out for last-step output, else T x B x out.
    With ``features=True`` the pre-readout features are returned instead of Y.
    """
    spec = net.spec
    if spec.embedding_dim:
        X = np.asarray(X)
        if X.ndim != 2:
            raise ShapeError(f"expected T x B token ids, got shape {X.shape}")
    else:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[2] != spec.input_dim:
            raise ShapeError(f"expected T x B x {spec.input_dim} input, got {X.shape}")
    if train_mode and rng is None:
        raise ConfigError("train-mode forward needs an rng for dropout")
    ctx = Context(train=train_mode, rng=rng, kinks=[] if track_kinks else None,
                  initial_states=dict(initial_states or {}))
    feats, body_cache = net.body.forward(X, ctx)
    if features:
        return feats, Tape([body_cache, None], id(net), net.version, X.shape, ctx)
    Y, head_cache = net.head.forward(feats, ctx)
    return Y, Tape([body_cache, head_cache], id(net), net.version, X.shape, ctx)


def network_backward(net, tape, dY):
    if tape.net_id != id(net) or tape.version != net.version:
        raise StaleCacheError("forward record is stale: parameters changed since the forward pass")
    body_cache, head_cache = tape.cache
    if head_cache is None:
        raise StaleCacheError("forward record was taken with features=True and has no head")
    grads = {}
    dfeats = net.head.backward(np.asarray(dY, dtype=np.float64), head_cache, grads)
    dX = net.body.backward(dfeats, body_cache, grads)
    params = net.parameters()
    for key, arr in params.items():
        if key not in grads:
            grads[key] = np.zeros_like(arr)
    return NetworkGrads(params={k: grads[k] for k in params}, dX=dX)
