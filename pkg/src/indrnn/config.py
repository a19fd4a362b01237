"""Run configuration: a flat ``key = value`` text format with ``#`` comments.

The canonical form lists every field once, sorted by key, so that
``to_text(parse(to_text(c))) == to_text(c)`` for any valid config.
"""
import dataclasses
import math
from dataclasses import dataclass, fields
from typing import Optional, Tuple

from .architectures import Dropouts, NetworkSpec
from .errors import ConfigError

TASKS = ("adding", "pixels", "charlm", "gradcheck", "gradflow", "bench", "equiv")
SCHEDULES = ("plateau", "step", "none")


@dataclass
class RunConfig:
    task: str = "adding"
    seed: int = 0
    # network
    kind: str = "stacked"
    cell: str = "indrnn"
    layers: int = 2
    hidden: int = 128
    growth_rate: int = 16
    block_config: Tuple[int, ...] = (8, 6, 4)
    activation: str = "relu"
    batch_norm: bool = False
    bn_policy: str = "all_steps"
    composite: str = ""
    embedding_dim: int = 0
    vanilla_radius: float = 0.9
    drop_layer: float = 0.0
    drop_input: float = 0.0
    drop_dense: float = 0.0
    drop_bottleneck: float = 0.0
    drop_transition: float = 0.0
    # recurrent-weight regulation
    gamma: float = 2.0
    init_gamma: float = math.nan
    epsilon: float = 0.01
    last_layer_init: str = "auto"
    # data and batching
    T: int = 100
    B: int = 50
    data_dir: str = ""
    corpus: str = ""
    permute: bool = False
    valid_fraction: float = 0.05
    # optimisation
    lr: float = 2e-4
    weight_decay: float = 0.0
    schedule: str = "step"
    decay_every: int = 20000
    decay_factor: float = 10.0
    patience: int = 100
    plateau_factor: float = 5.0
    steps: int = 30000
    epochs: int = 0
    time_limit: float = 0.0
    eval_every: int = 100
    eval_batches: int = 10
    target: float = math.nan
    # output
    checkpoint_every: int = 0
    plots: bool = True
    # task-specific
    trials: int = 20
    widths: Tuple[int, ...] = (64, 128, 256, 512, 1024)
    reps: int = 30
    out: str = ""

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, str) and ("#" in v or "\n" in v or v != v.strip()):
                raise ConfigError("text values may not contain '#', newlines or edge spaces", f.name)
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}", "task")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}", "schedule")
        for name in ("T", "B", "layers", "hidden", "eval_every", "eval_batches", "reps", "trials"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", name)
        for name in ("steps", "epochs", "checkpoint_every", "embedding_dim", "decay_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0", name)
        if not self.lr > 0:
            raise ConfigError("lr must be positive", "lr")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive (inf disables the constraint)", "gamma")
        if not 0 < self.epsilon:
            raise ConfigError("epsilon must be positive", "epsilon")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0", "weight_decay")
        if not 0 <= self.valid_fraction < 1:
            raise ConfigError("valid_fraction must lie in [0, 1)", "valid_fraction")
        if self.decay_factor <= 0 or self.plateau_factor <= 0:
            raise ConfigError("decay factors must be positive",
                              "decay_factor" if self.decay_factor <= 0 else "plateau_factor")
        return self

    def network_spec(self, input_dim, output_dim, output_mode, seq_len_hint=None):
        spec = NetworkSpec(
            kind=self.kind, layers=self.layers, hidden=self.hidden,
            growth_rate=self.growth_rate, block_config=tuple(self.block_config),
            input_dim=input_dim, output_dim=output_dim, output_mode=output_mode,
            dropout=Dropouts(layer=self.drop_layer, input=self.drop_input,
                             dense=self.drop_dense, bottleneck=self.drop_bottleneck,
                             transition=self.drop_transition),
            batch_norm=self.batch_norm, bn_policy=self.bn_policy, gamma=self.gamma,
            seq_len_hint=self.T if seq_len_hint is None else seq_len_hint,
            epsilon=self.epsilon, last_layer_init=self.last_layer_init,
            init_gamma=None if math.isnan(self.init_gamma) else self.init_gamma,
            activation=self.activation, cell=self.cell, composite=self.composite or None,
            embedding_dim=self.embedding_dim or None, vanilla_radius=self.vanilla_radius)
        try:
            spec.validate()
        except ConfigError as exc:
            raise ConfigError(str(exc), exc.field) from None
        return spec

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _convert(name, text):
    kind = _FIELDS[name].type
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind == Tuple[int, ...]:
            return tuple(int(p) for p in text.split(",") if p.strip())
        return text
    except ValueError:
        raise ConfigError(f"cannot read {text!r} as {getattr(kind, '__name__', kind)}", name) from None


def parse_config(text, base=None):
    """Parse config text; keys not present keep their value from ``base``."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}", key)
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}", key)
        values[key] = _convert(key, value)
    base = base or RunConfig()
    return dataclasses.replace(base, **values).validate()


def load_config(path, **overrides):
    with open(path, encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    return cfg.replace(**overrides) if overrides else cfg


def to_text(cfg):
    return "".join(f"{name} = {_format(getattr(cfg, name))}\n" for name in sorted(_FIELDS))


def config_from_dict(d: Optional[dict] = None, **kw):
    return RunConfig(**{**(d or {}), **kw}).validate()
