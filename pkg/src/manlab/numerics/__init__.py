from . import checkpoint, nn, ops
from .ops import (
    add, argmax, batch_norm, channel_scale, concat, conv2d, conv_transpose2d, cross_entropy,
    flatten, instance_norm, l2_norm, log_softmax, matmul, max_pool2d, mean, mul, relu,
    sigmoid, softmax, sub, sum,
)
from .optim import Adam, AdamState, adam_step, step_decay
from .tensor import (
    NonFiniteError, ShapeError, Tensor, default_dtype, finite_checks, grad_enabled, no_grad,
    precision,
)
