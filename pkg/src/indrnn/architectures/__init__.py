"""Deep IndRNN networks: stacked, residual and densely connected."""
from .network import (
    COMPOSITES,
    EVERY_STEP_OUTPUT,
    LAST_STEP,
    Dropouts,
    Network,
    NetworkGrads,
    NetworkSpec,
    Tape,
    build_network,
    dense_widths,
    network_backward,
    network_forward,
    param_count,
)
from .nodes import (
    ALL_STEPS,
    PER_STEP,
    Activation,
    Add,
    Affine,
    BatchNorm,
    Concat,
    Context,
    DenseUnit,
    Dropout,
    Embedding,
    IndRec,
    Residual,
    SelectLast,
    Sequential,
    VanillaRec,
    dropout_mask,
)


def batchnorm_apply(bn, X, train_mode):
    y, _ = bn.forward(X, Context(train=train_mode))
    return y
