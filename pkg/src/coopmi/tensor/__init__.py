from . import functional, kernels
from .functional import entropy, log_softmax, softmax, softplus
from .gradcheck import check_loss, grad_check
from .layers import LayerSpec, Network, ShapeError, backward, conv, dense, forward, reshape, tconv
from .params import Adam, CheckpointError, DivergenceError, ParameterSet, adam_step, read_records, write_records

__all__ = [
    "Adam",
    "CheckpointError",
    "DivergenceError",
    "LayerSpec",
    "Network",
    "ParameterSet",
    "ShapeError",
    "adam_step",
    "backward",
    "check_loss",
    "conv",
    "dense",
    "entropy",
    "forward",
    "functional",
    "grad_check",
    "kernels",
    "log_softmax",
    "read_records",
    "reshape",
    "softmax",
    "softplus",
    "tconv",
    "write_records",
]
