from .adam import AdamState, adam_step
from .tensor import (
    NonFiniteError,
    Tensor,
    add,
    backward,
    bce_with_logits,
    concat,
    crop,
    conv1d,
    conv1d_transposed,
    conv_output_length,
    div,
    global_layer_norm,
    mean,
    mse,
    mul,
    neg,
    prelu,
    relu,
    reshape,
    sigmoid,
    sqrt,
    sub,
)
from .tensor import sum as reduce_sum

__all__ = [
    "AdamState", "adam_step", "NonFiniteError", "Tensor", "add", "backward", "bce_with_logits",
    "concat", "crop", "conv1d", "conv1d_transposed", "conv_output_length", "div", "global_layer_norm",
    "mean", "mse", "mul", "neg", "prelu", "reduce_sum", "relu", "reshape", "sigmoid", "sqrt", "sub",
]
