from .tensor import (
    NonFiniteError,
    Param,
    Tensor,
    as_tensor,
    default_dtype,
    no_grad,
    precision,
    resolve_dtype,
    set_default_dtype,
)
from .ops import (
    avg_pool2d,
    batch_norm,
    conv2d,
    depthwise_conv2d,
    layer_norm,
    matmul,
    softmax,
)
from .gradcheck import grad_check
from .optim import OptimizerState, optimizer_step

softmax_axis = softmax

__all__ = [
    "NonFiniteError", "Param", "Tensor", "as_tensor", "default_dtype", "no_grad", "precision",
    "resolve_dtype", "set_default_dtype", "avg_pool2d", "batch_norm", "conv2d",
    "depthwise_conv2d", "layer_norm", "matmul", "softmax", "softmax_axis", "grad_check",
    "OptimizerState", "optimizer_step",
]
