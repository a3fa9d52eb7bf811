"""Candidate operation sets for the convolutional and recurrent searches.

Both sets are closed enumerations; configs and genotype files refer to
members by their snake_case value.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .autodiff import (
    Tensor,
    affine,
    avg_pool2d,
    concat,
    conv2d,
    elementwise_add,
    elementwise_mul,
    getitem,
    leaky_relu,
    max_pool2d,
    neg,
    sigmoid,
    tanh,
    uniform_init,
)


class CnnOpKind(str, Enum):
    MAX_POOL_3X3 = "max_pool_3x3"
    AVG_POOL_3X3 = "avg_pool_3x3"
    SKIP_CONNECT = "skip_connect"
    SEP_CONV_3X3 = "sep_conv_3x3"
    SEP_CONV_5X5 = "sep_conv_5x5"
    DIL_CONV_3X3 = "dil_conv_3x3"
    DIL_CONV_5X5 = "dil_conv_5x5"
    NONE = "none"


class RnnOpKind(str, Enum):
    LINEAR = "linear"
    BLEND = "blend"
    ELEMENTWISE_PRODUCT = "elementwise_product"
    ELEMENTWISE_SUM = "elementwise_sum"
    TANH_ACT = "tanh_act"
    SIGMOID_ACT = "sigmoid_act"
    LEAKY_RELU_ACT = "leaky_relu_act"


CNN_OPS: tuple[CnnOpKind, ...] = tuple(CnnOpKind)
RNN_OPS: tuple[RnnOpKind, ...] = tuple(RnnOpKind)

# (kernel, dilation) for the convolutional candidates
CONV_GEOMETRY = {
    CnnOpKind.SEP_CONV_3X3: (3, 1),
    CnnOpKind.SEP_CONV_5X5: (5, 1),
    CnnOpKind.DIL_CONV_3X3: (3, 2),
    CnnOpKind.DIL_CONV_5X5: (5, 2),
}

RNN_ARITY = {
    RnnOpKind.LINEAR: 1,
    RnnOpKind.BLEND: 3,
    RnnOpKind.ELEMENTWISE_PRODUCT: 2,
    RnnOpKind.ELEMENTWISE_SUM: 2,
    RnnOpKind.TANH_ACT: 1,
    RnnOpKind.SIGMOID_ACT: 1,
    RnnOpKind.LEAKY_RELU_ACT: 1,
}


def reduced_size(n: int, stride: int) -> int:
    return -(-n // stride)


def _check_stride(stride: int) -> None:
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")


def init_cnn_op_params(kind: CnnOpKind, channels: int, stride: int, rng: np.random.Generator, gain: float = 1.0) -> dict[str, Tensor]:
    kind = CnnOpKind(kind)
    _check_stride(stride)
    c = channels
    if kind in CONV_GEOMETRY:
        k, _ = CONV_GEOMETRY[kind]
        params = {
            "dw1": uniform_init(rng, (c, 1, k, k), k * k, gain),
            "pw1": uniform_init(rng, (c, c, 1, 1), c, gain),
        }
        if kind in (CnnOpKind.SEP_CONV_3X3, CnnOpKind.SEP_CONV_5X5):
            params["dw2"] = uniform_init(rng, (c, 1, k, k), k * k, gain)
            params["pw2"] = uniform_init(rng, (c, c, 1, 1), c, gain)
        return params
    if kind is CnnOpKind.SKIP_CONNECT and stride == 2:
        return factorized_reduce_params(c, c, rng, gain)
    return {}


def factorized_reduce_params(c_in: int, c_out: int, rng, gain: float = 1.0) -> dict[str, Tensor]:
    if c_out < 2:
        return {"fr1": uniform_init(rng, (c_out, c_in, 1, 1), c_in, gain)}
    half = c_out // 2
    return {
        "fr1": uniform_init(rng, (half, c_in, 1, 1), c_in, gain),
        "fr2": uniform_init(rng, (c_out - half, c_in, 1, 1), c_in, gain),
    }


def factorized_reduce(x: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Halve the spatial size with two offset 1x1 stride-2 convolutions."""
    h = leaky_relu(x)
    a = conv2d(h, params["fr1"], stride=2)
    if "fr2" not in params:
        return a
    ho, wo = a.shape[2:]
    b = conv2d(h, params["fr2"], stride=2, padding=1)
    b = getitem(b, (slice(None), slice(None), slice(1, 1 + ho), slice(1, 1 + wo)))
    return concat([a, b], axis=1)


def cnn_output_shape(x_shape: tuple[int, ...], stride: int) -> tuple[int, ...]:
    b, c, h, w = x_shape
    return (b, c, reduced_size(h, stride), reduced_size(w, stride))


def cnn_op_apply(kind: CnnOpKind, x: Tensor, stride: int, params: dict[str, Tensor]) -> Tensor:
    kind = CnnOpKind(kind)
    _check_stride(stride)
    if len(x.shape) != 4:
        raise ValueError(f"expected [B,C,H,W] input, got {x.shape}")
    c = x.shape[1]
    if kind is CnnOpKind.NONE:
        return Tensor(np.zeros(cnn_output_shape(x.shape, stride), x.data.dtype))
    if kind is CnnOpKind.MAX_POOL_3X3:
        return max_pool2d(x, 3, stride, 1)
    if kind is CnnOpKind.AVG_POOL_3X3:
        return avg_pool2d(x, 3, stride, 1)
    if kind is CnnOpKind.SKIP_CONNECT:
        if stride == 1:
            return x
        _expect_channels(params["fr1"].shape[1], c)
        return factorized_reduce(x, params)
    k, d = CONV_GEOMETRY[kind]
    pad = d * (k - 1) // 2
    _expect_channels(params["dw1"].shape[0], c)
    h = leaky_relu(x)
    h = conv2d(h, params["dw1"], stride=stride, dilation=d, padding=pad, groups=c)
    h = conv2d(h, params["pw1"])
    if "dw2" in params:
        h = leaky_relu(h)
        h = conv2d(h, params["dw2"], padding=pad, groups=c)
        h = conv2d(h, params["pw2"])
    return h


def _expect_channels(expected: int, got: int) -> None:
    if expected != got:
        raise ValueError(f"channel mismatch: op built for {expected} channels, input has {got}")


def init_rnn_op_params(kind: RnnOpKind, hidden: int, rng: np.random.Generator) -> dict[str, Tensor]:
    if RnnOpKind(kind) is RnnOpKind.LINEAR:
        return {"weight": uniform_init(rng, (hidden, hidden), hidden), "bias": uniform_init(rng, (hidden,), hidden)}
    return {}


def rnn_op_apply(kind: RnnOpKind, operands: list[Tensor], params: dict[str, Tensor] | None = None) -> Tensor:
    kind = RnnOpKind(kind)
    if len(operands) != RNN_ARITY[kind]:
        raise ValueError(f"{kind.value} takes {RNN_ARITY[kind]} operands, got {len(operands)}")
    shape = operands[0].shape
    if len(shape) != 2 or any(t.shape != shape for t in operands):
        raise ValueError(f"{kind.value}: operands must share a [B,h] shape, got {[t.shape for t in operands]}")
    if kind is RnnOpKind.LINEAR:
        return affine(operands[0], params["weight"], params["bias"])
    if kind is RnnOpKind.BLEND:
        z, a, b = operands
        return elementwise_add(elementwise_mul(sigmoid(z), a), elementwise_mul(sigmoid(neg(z)), b))
    if kind is RnnOpKind.ELEMENTWISE_PRODUCT:
        return elementwise_mul(*operands)
    if kind is RnnOpKind.ELEMENTWISE_SUM:
        return elementwise_add(*operands)
    if kind is RnnOpKind.TANH_ACT:
        return tanh(operands[0])
    if kind is RnnOpKind.SIGMOID_ACT:
        return sigmoid(operands[0])
    return leaky_relu(operands[0])
