"""A small reverse-mode automatic differentiation engine on numpy."""

from .engine import GradCheckReport, backward, check_gradients, forward, grad_check
from .optim import AdamState, SGDState, adam_step, clip_grad_norm, sgd_step
from .primitives import (
    LEAKY_SLOPE,
    add_n,
    affine,
    avg_pool2d,
    concat,
    conv2d,
    cross_entropy,
    elementwise_add,
    elementwise_mul,
    getitem,
    leaky_relu,
    matmul,
    max_pool2d,
    mean,
    neg,
    reduce_sum,
    reshape,
    sigmoid,
    softmax,
    tanh,
)
from .tensor import DEFAULT_DTYPE, NonFiniteError, ShapeError, Tape, TapeError, Tensor, parameter


def uniform_init(rng, shape, fan_in, gain=1.0):
    """Uniform in [-gain/sqrt(fan_in), +gain/sqrt(fan_in)], as a trainable leaf."""
    bound = gain / max(fan_in, 1) ** 0.5
    return parameter(rng.uniform(-bound, bound, size=shape).astype(DEFAULT_DTYPE))
