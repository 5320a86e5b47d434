"""Small deterministic tensor engine with reverse-mode differentiation."""

from lvnet.numerics import ops
from lvnet.numerics.functional import (
    affine,
    bilinear_matrix,
    conv2d,
    gelu,
    layer_norm,
    pointwise,
    relu,
    sigmoid,
    softmax,
)
from lvnet.numerics.gradcheck import grad_check, relative_error
from lvnet.numerics.params import AdamState, ParameterStore, adam_step
from lvnet.numerics.rearrange import (
    channel_to_space,
    expand_neighbors,
    merge_neighbors,
    rearrange,
    space_to_channel,
    window_partition,
    window_reverse,
)
from lvnet.numerics.tensor import Tensor, as_tensor, no_grad, set_finite_checks

__all__ = [
    "AdamState",
    "ParameterStore",
    "Tensor",
    "adam_step",
    "affine",
    "as_tensor",
    "bilinear_matrix",
    "channel_to_space",
    "conv2d",
    "expand_neighbors",
    "gelu",
    "grad_check",
    "layer_norm",
    "merge_neighbors",
    "no_grad",
    "ops",
    "pointwise",
    "rearrange",
    "relative_error",
    "relu",
    "set_finite_checks",
    "sigmoid",
    "softmax",
    "space_to_channel",
    "window_partition",
    "window_reverse",
]
