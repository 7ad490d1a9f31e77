"""Numeric core: tensors with autodiff, NN primitives, interpolation, file IO."""

from .interpolate import bilinear_sample, bilinear_upsample, upsample_grid
from .nn import (
    LAYER_NORM_EPS,
    MlpSpec,
    Parameter,
    SgdTrainer,
    glorot_uniform,
    init_mlp_params,
    layer_norm,
    linear_forward,
    make_rng,
    mlp_forward,
)
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    exp,
    gelu,
    log,
    matmul,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    scatter_rows,
    sigmoid,
    slice_cols,
    softmax,
    take_rows,
    tensor_max,
    tensor_mean,
    tensor_sum,
    topk_select,
    transpose,
)
from .tensorfile import (
    config_hash,
    load_checkpoint,
    read_tensor,
    restore_parameters,
    save_checkpoint,
    write_tensor,
)

__all__ = [
    "LAYER_NORM_EPS",
    "MlpSpec",
    "Parameter",
    "SgdTrainer",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "bilinear_sample",
    "bilinear_upsample",
    "clip",
    "concat",
    "config_hash",
    "exp",
    "gelu",
    "glorot_uniform",
    "init_mlp_params",
    "layer_norm",
    "linear_forward",
    "load_checkpoint",
    "log",
    "make_rng",
    "matmul",
    "mlp_forward",
    "mul",
    "neg",
    "no_grad",
    "power",
    "read_tensor",
    "relu",
    "reshape",
    "restore_parameters",
    "save_checkpoint",
    "scatter_rows",
    "sigmoid",
    "slice_cols",
    "softmax",
    "take_rows",
    "tensor_max",
    "tensor_mean",
    "tensor_sum",
    "topk_select",
    "transpose",
    "upsample_grid",
    "write_tensor",
]
