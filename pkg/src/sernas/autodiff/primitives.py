"""The fixed primitive set.

Every primitive is a small object with ``infer`` (shape rule, raises
ShapeError), ``forward`` (arrays -> (array, ctx)) and ``backward``
(ctx, upstream grad, input arrays -> one grad per input, or None).
Primitives with kinks expose ``signature(ctx)`` so the gradient checker
can detect probes that cross a non-differentiable point.
"""

from __future__ import annotations

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor, current_tape, Node

LEAKY_SLOPE = 0.01


def apply(prim, *inputs: Tensor) -> Tensor:
    tape = current_tape()
    index = len(tape.nodes) if tape is not None else -1
    try:
        prim.infer(*(t.shape for t in inputs))
    except ShapeError as exc:
        raise ShapeError(f"node {index} ({prim.name}): {exc}") from None
    out, ctx = prim.forward(*(t.data for t in inputs))
    check_finite(out, f"node {index} ({prim.name})")
    t = Tensor._wrap(out, any(x.requires_grad for x in inputs))
    if tape is not None:
        tape.record(Node(prim, tuple(inputs), t, ctx))
    return t


def check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NonFiniteError(f"{where}: non-finite value at index {tuple(int(i) for i in bad)}")


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast(name, *shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast {shapes}") from None


class _Prim:
    name = "prim"
    __slots__ = ()

    def infer(self, *shapes):
        return None

    def __repr__(self):
        return self.name


# -- elementwise -------------------------------------------------------------


class Add(_Prim):
    name = "elementwise_add"

    def infer(self, a, b):
        return _broadcast(self.name, a, b)

    def forward(self, a, b):
        return a + b, None

    def backward(self, ctx, g, a, b):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)


class Mul(_Prim):
    name = "elementwise_mul"

    def infer(self, a, b):
        return _broadcast(self.name, a, b)

    def forward(self, a, b):
        return a * b, None

    def backward(self, ctx, g, a, b):
        return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)


class Neg(_Prim):
    name = "neg"

    def forward(self, a):
        return -a, None

    def backward(self, ctx, g, a):
        return (-g,)


class Sigmoid(_Prim):
    name = "sigmoid"

    def forward(self, x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out, out

    def backward(self, y, g, x):
        return (g * y * (1 - y),)


class Tanh(_Prim):
    name = "tanh"

    def forward(self, x):
        y = np.tanh(x)
        return y, y

    def backward(self, y, g, x):
        return (g * (1 - y * y),)


class LeakyRelu(_Prim):
    name = "leaky_relu"
    __slots__ = ("slope",)

    def __init__(self, slope=LEAKY_SLOPE):
        self.slope = slope

    def forward(self, x):
        pos = x > 0
        return np.where(pos, x, x * x.dtype.type(self.slope)), pos

    def backward(self, pos, g, x):
        return (np.where(pos, g, g * g.dtype.type(self.slope)),)

    def signature(self, pos):
        return pos


# -- linear algebra ----------------------------------------------------------


class MatMul(_Prim):
    name = "matmul"

    def infer(self, a, b):
        if len(a) < 2 or len(b) < 2 or a[-1] != b[-2]:
            raise ShapeError(f"matmul: incompatible {a} @ {b}")
        _broadcast(self.name, a[:-2], b[:-2])

    def forward(self, a, b):
        return np.matmul(a, b), None

    def backward(self, ctx, g, a, b):
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


class Affine(_Prim):
    """x[..., in] @ W[in, out] + b[out]."""

    name = "affine"

    def infer(self, x, w, b):
        if len(w) != 2 or len(b) != 1 or x[-1] != w[0] or b[0] != w[1]:
            raise ShapeError(f"affine: x{x}, W{w}, b{b}")

    def forward(self, x, w, b):
        return x @ w + b, None

    def backward(self, ctx, g, x, w, b):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.reshape(-1, x.shape[-1])
        return g @ w.T, x2.T @ g2, g2.sum(axis=0)


# -- convolution and pooling -------------------------------------------------


def _out_len(n, k, stride, dilation, padding):
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _window(i, j, stride, dilation, ho, wo):
    return (
        slice(None),
        slice(None),
        slice(i * dilation, i * dilation + stride * (ho - 1) + 1, stride),
        slice(j * dilation, j * dilation + stride * (wo - 1) + 1, stride),
    )


def _pad(x, p, value=0.0):
    if not p:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=value)


class Conv2d(_Prim):
    name = "conv2d"
    __slots__ = ("stride", "dilation", "padding", "groups")

    def __init__(self, stride=1, dilation=1, padding=0, groups=1):
        self.stride, self.dilation, self.padding, self.groups = stride, dilation, padding, groups

    def infer(self, x, w):
        if len(x) != 4 or len(w) != 4:
            raise ShapeError(f"conv2d: expected 4-D input and weight, got {x}, {w}")
        g = self.groups
        if x[1] != w[1] * g or w[0] % g:
            raise ShapeError(f"conv2d: {x[1]} input channels, weight {w}, groups {g}")
        ho = _out_len(x[2], w[2], self.stride, self.dilation, self.padding)
        wo = _out_len(x[3], w[3], self.stride, self.dilation, self.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d: kernel {w[2:]} larger than padded input {x[2:]}")
        return (x[0], w[0], ho, wo)

    def _dims(self, x, w):
        ho = _out_len(x.shape[2], w.shape[2], self.stride, self.dilation, self.padding)
        wo = _out_len(x.shape[3], w.shape[3], self.stride, self.dilation, self.padding)
        return ho, wo

    def _depthwise(self, x, w):
        return self.groups == x.shape[1] == w.shape[0] and w.shape[1] == 1

    def forward(self, x, w):
        s, d = self.stride, self.dilation
        ho, wo = self._dims(x, w)
        b, c = x.shape[:2]
        o, cg, kh, kw = w.shape
        dtype = np.result_type(x, w)
        if kh == kw == 1 and self.padding == 0 and self.groups == 1:
            xs = x[:, :, ::s, ::s][:, :, :ho, :wo]
            return np.tensordot(w[:, :, 0, 0], xs, axes=([1], [1])).transpose(1, 0, 2, 3).astype(dtype, copy=False), None
        xp = _pad(x, self.padding)
        if self._depthwise(x, w):
            out = np.zeros((b, o, ho, wo), dtype)
            for i in range(kh):
                for j in range(kw):
                    out += xp[_window(i, j, s, d, ho, wo)] * w[None, :, 0, i, j, None, None]
            return out, None
        g = self.groups
        og = o // g
        xg = xp.reshape(b, g, cg, *xp.shape[2:])
        wg = w.reshape(g, og, cg, kh, kw)
        out = np.zeros((b, g, og, ho, wo), dtype)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None),) + _window(i, j, s, d, ho, wo)
                out += np.einsum("bgchw,goc->bgohw", xg[sl], wg[..., i, j], optimize=True)
        return out.reshape(b, o, ho, wo), None

    def backward(self, ctx, g_out, x, w):
        s, d, p = self.stride, self.dilation, self.padding
        ho, wo = g_out.shape[2:]
        b, c, h, wd = x.shape
        o, cg, kh, kw = w.shape
        if kh == kw == 1 and p == 0 and self.groups == 1:
            xs = x[:, :, ::s, ::s][:, :, :ho, :wo]
            gw = np.tensordot(g_out, xs, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
            gx = np.zeros_like(x)
            gx[:, :, ::s, ::s][:, :, :ho, :wo] = np.tensordot(w[:, :, 0, 0], g_out, axes=([0], [1])).transpose(1, 0, 2, 3)
            return gx, gw.astype(w.dtype, copy=False)
        xp = _pad(x, p)
        gxp = np.zeros(xp.shape, np.result_type(x, g_out))
        gw = np.zeros_like(w)
        if self._depthwise(x, w):
            for i in range(kh):
                for j in range(kw):
                    win = _window(i, j, s, d, ho, wo)
                    gw[:, 0, i, j] = np.einsum("bchw,bchw->c", g_out, xp[win])
                    gxp[win] += g_out * w[None, :, 0, i, j, None, None]
        else:
            grp = self.groups
            og = o // grp
            xg = xp.reshape(b, grp, cg, *xp.shape[2:])
            gxg = gxp.reshape(b, grp, cg, *xp.shape[2:])
            gg = g_out.reshape(b, grp, og, ho, wo)
            wg = w.reshape(grp, og, cg, kh, kw)
            gwg = gw.reshape(grp, og, cg, kh, kw)
            for i in range(kh):
                for j in range(kw):
                    sl = (slice(None),) + _window(i, j, s, d, ho, wo)
                    gwg[..., i, j] = np.einsum("bgohw,bgchw->goc", gg, xg[sl], optimize=True)
                    gxg[sl] += np.einsum("bgohw,goc->bgchw", gg, wg[..., i, j], optimize=True)
        gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        return gx, gw


class _Pool(_Prim):
    __slots__ = ("kernel", "stride", "padding")

    def __init__(self, kernel=3, stride=1, padding=1):
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def infer(self, x):
        if len(x) != 4:
            raise ShapeError(f"{self.name}: expected 4-D input, got {x}")
        if 2 * self.padding > self.kernel:
            raise ShapeError(f"{self.name}: padding {self.padding} exceeds half the kernel")
        if min(x[2:]) + 2 * self.padding < self.kernel:
            raise ShapeError(f"{self.name}: kernel {self.kernel} larger than padded input {x[2:]}")

    def _dims(self, x):
        k, s, p = self.kernel, self.stride, self.padding
        return _out_len(x.shape[2], k, s, 1, p), _out_len(x.shape[3], k, s, 1, p)


class AvgPool2d(_Pool):
    """Average pooling; zero padding counts toward the divisor."""

    name = "avg_pool2d"

    def forward(self, x):
        ho, wo = self._dims(x)
        xp = _pad(x, self.padding)
        out = np.zeros(x.shape[:2] + (ho, wo), x.dtype)
        for i in range(self.kernel):
            for j in range(self.kernel):
                out += xp[_window(i, j, self.stride, 1, ho, wo)]
        out *= x.dtype.type(1.0 / self.kernel**2)
        return out, None

    def backward(self, ctx, g, x):
        ho, wo = g.shape[2:]
        p = self.padding
        gxp = np.zeros((x.shape[0], x.shape[1], x.shape[2] + 2 * p, x.shape[3] + 2 * p), g.dtype)
        gs = g * g.dtype.type(1.0 / self.kernel**2)
        for i in range(self.kernel):
            for j in range(self.kernel):
                gxp[_window(i, j, self.stride, 1, ho, wo)] += gs
        return (gxp[:, :, p : p + x.shape[2], p : p + x.shape[3]] if p else gxp,)


class MaxPool2d(_Pool):
    """Max pooling; on ties the gradient goes to the first window position."""

    name = "max_pool2d"

    def forward(self, x):
        ho, wo = self._dims(x)
        xp = _pad(x, self.padding, -np.inf)
        best = xp[_window(0, 0, self.stride, 1, ho, wo)].copy()
        idx = np.zeros(best.shape, np.int8)
        pos = 0
        for i in range(self.kernel):
            for j in range(self.kernel):
                if pos:
                    cand = xp[_window(i, j, self.stride, 1, ho, wo)]
                    upd = cand > best
                    best = np.where(upd, cand, best)
                    idx[upd] = pos
                pos += 1
        return best, idx

    def backward(self, idx, g, x):
        ho, wo = g.shape[2:]
        p = self.padding
        gxp = np.zeros((x.shape[0], x.shape[1], x.shape[2] + 2 * p, x.shape[3] + 2 * p), g.dtype)
        pos = 0
        for i in range(self.kernel):
            for j in range(self.kernel):
                gxp[_window(i, j, self.stride, 1, ho, wo)] += np.where(idx == pos, g, 0)
                pos += 1
        return (gxp[:, :, p : p + x.shape[2], p : p + x.shape[3]] if p else gxp,)

    def signature(self, idx):
        return idx


# -- reductions and normalizers ---------------------------------------------


class Softmax(_Prim):
    name = "softmax"
    __slots__ = ("axis",)

    def __init__(self, axis=-1):
        self.axis = axis

    def forward(self, x):
        z = np.exp(x - x.max(axis=self.axis, keepdims=True))
        y = (z / z.sum(axis=self.axis, keepdims=True, dtype=np.float64)).astype(x.dtype)
        return y, y

    def backward(self, y, g, x):
        return (y * (g - (g * y).sum(axis=self.axis, keepdims=True)),)


class Mean(_Prim):
    name = "mean"
    __slots__ = ("axis", "keepdims")

    def __init__(self, axis=None, keepdims=False):
        self.axis, self.keepdims = axis, keepdims

    def forward(self, x):
        return np.asarray(x.mean(axis=self.axis, keepdims=self.keepdims, dtype=np.float64), dtype=x.dtype), None

    def backward(self, ctx, g, x):
        if self.axis is None:
            count = x.size
        else:
            axes = self.axis if isinstance(self.axis, tuple) else (self.axis,)
            count = int(np.prod([x.shape[a] for a in axes]))
        if not self.keepdims and self.axis is not None:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g / g.dtype.type(count), x.shape).copy(),)


class Sum(_Prim):
    name = "sum"
    __slots__ = ("axis", "keepdims")

    def __init__(self, axis=None, keepdims=False):
        self.axis, self.keepdims = axis, keepdims

    def forward(self, x):
        return np.asarray(x.sum(axis=self.axis, keepdims=self.keepdims, dtype=np.float64), dtype=x.dtype), None

    def backward(self, ctx, g, x):
        if not self.keepdims and self.axis is not None:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, x.shape).copy(),)


class CrossEntropy(_Prim):
    """Mean negative log-likelihood of integer labels under softmax(logits)."""

    name = "cross_entropy"
    __slots__ = ("labels",)

    def __init__(self, labels):
        self.labels = np.asarray(labels, dtype=np.int64)

    def infer(self, logits):
        if len(logits) != 2 or logits[0] != len(self.labels):
            raise ShapeError(f"cross_entropy: logits {logits} vs {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= logits[1]):
            raise ShapeError("cross_entropy: label out of range")

    def forward(self, logits):
        z = logits.astype(np.float64)
        z = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        rows = np.arange(len(self.labels))
        loss = np.mean(lse - z[rows, self.labels])
        prob = np.exp(z - lse[:, None])
        return np.asarray(loss, dtype=logits.dtype), prob

    def backward(self, prob, g, logits):
        grad = prob.copy()
        grad[np.arange(len(self.labels)), self.labels] -= 1.0
        grad *= float(g) / len(self.labels)
        return (grad.astype(logits.dtype),)


# -- structural --------------------------------------------------------------


class Concat(_Prim):
    name = "concat"
    __slots__ = ("axis",)

    def __init__(self, axis=0):
        self.axis = axis

    def infer(self, *shapes):
        ax = self.axis % len(shapes[0])
        for s in shapes[1:]:
            if len(s) != len(shapes[0]) or any(a != b for i, (a, b) in enumerate(zip(s, shapes[0])) if i != ax):
                raise ShapeError(f"concat: mismatched shapes {shapes} along axis {self.axis}")

    def forward(self, *xs):
        return np.concatenate(xs, axis=self.axis), None

    def backward(self, ctx, g, *xs):
        splits = np.cumsum([x.shape[self.axis] for x in xs])[:-1]
        return tuple(np.split(g, splits, axis=self.axis))


class Reshape(_Prim):
    name = "reshape"
    __slots__ = ("shape",)

    def __init__(self, shape):
        self.shape = tuple(shape)

    def infer(self, x):
        known = int(np.prod([n for n in self.shape if n != -1]))
        total = int(np.prod(x))
        if (-1 not in self.shape and known != total) or (known == 0 or total % known):
            raise ShapeError(f"reshape: cannot view {x} as {self.shape}")

    def forward(self, x):
        return x.reshape(self.shape), None

    def backward(self, ctx, g, x):
        return (g.reshape(x.shape),)


class GetItem(_Prim):
    """Basic (slice/int) indexing."""

    name = "getitem"
    __slots__ = ("index",)

    def __init__(self, index):
        self.index = index if isinstance(index, tuple) else (index,)

    def forward(self, x):
        return np.ascontiguousarray(x[self.index]), None

    def backward(self, ctx, g, x):
        gx = np.zeros(x.shape, g.dtype)
        gx[self.index] = np.reshape(g, gx[self.index].shape)
        return (gx,)


# -- functional API ------------------------------------------------------------


def elementwise_add(a, b):
    return apply(Add(), a, b)


def elementwise_mul(a, b):
    return apply(Mul(), a, b)


def neg(a):
    return apply(Neg(), a)


def sigmoid(x):
    return apply(Sigmoid(), x)


def tanh(x):
    return apply(Tanh(), x)


def leaky_relu(x, slope=LEAKY_SLOPE):
    return apply(LeakyRelu(slope), x)


def matmul(a, b):
    return apply(MatMul(), a, b)


def affine(x, w, b):
    return apply(Affine(), x, w, b)


def conv2d(x, w, stride=1, dilation=1, padding=0, groups=1):
    return apply(Conv2d(stride, dilation, padding, groups), x, w)


def avg_pool2d(x, kernel=3, stride=1, padding=1):
    return apply(AvgPool2d(kernel, stride, padding), x)


def max_pool2d(x, kernel=3, stride=1, padding=1):
    return apply(MaxPool2d(kernel, stride, padding), x)


def softmax(x, axis=-1):
    return apply(Softmax(axis), x)


def mean(x, axis=None, keepdims=False):
    return apply(Mean(axis, keepdims), x)


def reduce_sum(x, axis=None, keepdims=False):
    return apply(Sum(axis, keepdims), x)


def cross_entropy(logits, labels):
    return apply(CrossEntropy(labels), logits)


def concat(tensors, axis=0):
    return apply(Concat(axis), *tensors)


def reshape(x, shape):
    return apply(Reshape(shape), x)


def getitem(x, index):
    return apply(GetItem(index), x)


def add_n(tensors):
    """Left-to-right sum; fixed order keeps results bitwise reproducible."""
    it = iter(tensors)
    total = next(it)
    for t in it:
        total = elementwise_add(total, t)
    return total
