"""Minimal float64 tensor library with reverse-mode autodiff and Adam."""
from amrl.tensor.adam import AdamConfig, AdamState, adam_step
from amrl.tensor.checkpoint import load_checkpoint, save_checkpoint
from amrl.tensor.kernels import BACKEND
from amrl.tensor.ops import (
    add, add_n, affine, conv2d, dot, elu, flatten, fully_connected, log_clamped, mul,
    pick, softmax, square, total,
)
from amrl.tensor.params import NetworkParams
from amrl.tensor.tensor import Tape, Tensor

__all__ = [
    "AdamConfig", "AdamState", "BACKEND", "NetworkParams", "Tape", "Tensor",
    "adam_step", "add", "add_n", "affine", "conv2d", "dot", "elu", "flatten",
    "fully_connected", "load_checkpoint", "log_clamped", "mul", "pick",
    "save_checkpoint", "softmax", "square", "total",
]
