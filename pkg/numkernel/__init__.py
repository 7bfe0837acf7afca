"""
numkernel - minimal dense kernel with reverse-mode gradients
"""

from numkernel.tensor import Tensor, Tape, backward, active_tape
from numkernel.ops import (
    MASK_BLOCKED,
    add,
    as_tensor,
    concat,
    embedding,
    gelu,
    layer_norm,
    linear,
    matmul,
    mse,
    mul,
    reshape,
    scale,
    slice_axis,
    softmax_masked,
    sum_all,
    transpose,
)

__all__ = [
    "Tensor", "Tape", "backward", "active_tape", "MASK_BLOCKED",
    "add", "as_tensor", "concat", "embedding", "gelu", "layer_norm", "linear",
    "matmul", "mse", "mul", "reshape", "scale", "slice_axis", "softmax_masked",
    "sum_all", "transpose",
]
