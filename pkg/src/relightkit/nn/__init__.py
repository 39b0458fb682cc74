"""Minimal numpy tensor library with reverse-mode autodiff.

Just enough machinery for static feed-forward conv nets: a taped Tensor,
2D/3D convolutions, a handful of activations and shape ops, Adam, and a
flat checkpoint format.  Float32 semantics by default; every op also works
in float64, which the finite-difference gradient tests rely on.
"""

from .tensor import (Tensor, tensor, concat, maximum, reduce_max, relu,
                     leaky_relu, sigmoid, softplus, mse, resize_bilinear,
                     upsample2x, GraphError)
from .layers import Conv2d, Conv3d, Module, Adam
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointError

__all__ = [
    "Tensor", "tensor", "concat", "maximum", "reduce_max", "relu",
    "leaky_relu", "sigmoid", "softplus", "mse", "resize_bilinear",
    "upsample2x", "GraphError", "Conv2d", "Conv3d", "Module", "Adam",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]
