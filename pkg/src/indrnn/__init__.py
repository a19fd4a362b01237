"""Independently recurrent networks in numpy: the layer, deep architectures,
training loop, experiments and diagnostics."""
__version__ = "0.1.0"

from .architectures import NetworkSpec, build_network, network_backward, network_forward
from .layer import IndRnnLayer, backward_sequence, clamp_recurrent, forward_sequence, init_layer
from .numerics import Rng, seed_rng

__all__ = [
    "IndRnnLayer", "NetworkSpec", "Rng", "backward_sequence", "build_network", "clamp_recurrent",
    "forward_sequence", "init_layer", "network_backward", "network_forward", "seed_rng",
]
