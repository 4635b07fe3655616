from .tape import (
    Tensor,
    ShapeError,
    no_grad,
    tensor,
    zeros,
    affine,
    matmul,
    concat,
    softmax,
    layer_norm,
    tanh,
    gelu,
    relu,
    masked_mse,
    conv1d_time,
    attention_block,
    attention_weights,
    init_uniform,
)
from .store import ParameterStore, adam_step
from .gradcheck import GradReport, grad_check

__all__ = [
    "Tensor", "ShapeError", "no_grad", "tensor", "zeros", "affine", "matmul",
    "concat", "softmax", "layer_norm", "tanh", "gelu", "relu", "masked_mse",
    "conv1d_time", "attention_block", "attention_weights", "init_uniform",
    "ParameterStore", "adam_step", "GradReport", "grad_check",
]
