"""Differentiable primitives on :class:`~cotnet.tensor.Tensor`.

All image ops use (N, C, H, W) layout.  Convolution is cross-correlation
with zero padding; spatial output extent is ``(H + 2*padding - k) // stride + 1``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ConfigError, ShapeError, Tensor, as_tensor, make_result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return a, b


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return make_result(data, (a, b), backward, "div")


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a non-differentiable scalar."""
    c = float(c)
    return make_result(x.data * x.dtype.type(c), (x,), lambda g: (g * c,), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # subgradient 0 at exactly 0
    return make_result(np.where(mask, x.data, 0).astype(x.dtype), (x,),
                       lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat along axis {axis}: {ref} vs {t.shape}")
    data = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return make_result(data, tensors, backward, "concat")


def concat_channels(tensors) -> Tensor:
    return concat(tensors, axis=1)


def elementwise(kind: str, *operands, factor: float | None = None) -> Tensor:
    """Dispatch ``relu | add | mul | concat_channels | scale`` by name."""
    if kind == "relu":
        (x,) = operands
        return relu(x)
    if kind == "add":
        a, b = operands
        return add(a, b)
    if kind == "mul":
        a, b = operands
        return mul(a, b)
    if kind == "concat_channels":
        return concat_channels(operands)
    if kind == "scale":
        (x,) = operands
        if factor is None:
            raise ConfigError("scale needs a factor")
        return scale(x, factor)
    raise ConfigError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# shape manipulation and reductions
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {shape}") from exc
    return make_result(data, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    data = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(data, copy=True), (x,), backward, "getitem")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(data), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax_axis(x: Tensor, axis: int) -> Tensor:
    """Numerically stable softmax along ``axis`` (max subtracted before exp)."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), backward, "log_softmax")


# ---------------------------------------------------------------------------
# dense layers
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape (N, Cin) and weight (Cout, Cin)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match {weight.shape[0]} outputs")
    data = x.data @ weight.data.T
    if bias is not None:
        data = data + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_result(data, parents, backward, "linear")


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - k) // stride + 1
    if out < 1:
        raise ShapeError(f"window {k} (padding {padding}) larger than input extent {size}")
    return out


def _pad_hw(x: np.ndarray, p: int, value=0.0) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=value)


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """View of shape (N, C, Ho, Wo, kh, kw) over an already padded map."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation via im2col + batched matmul."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigError(f"conv2d: channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cin_g * groups != cin:
        raise ShapeError(f"conv2d: weight expects {cin_g * groups} input channels, input has {cin}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d: invalid stride={stride} / padding={padding}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {cout} outputs")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    g_, og = groups, cout // groups
    kdim = cin_g * kh * kw

    xp = _pad_hw(x.data, padding)
    win = _windows(xp, kh, kw, stride, ho, wo)  # N, C, Ho, Wo, kh, kw
    cols = win.reshape(n, g_, cin_g, ho, wo, kh, kw).transpose(1, 0, 3, 4, 2, 5, 6)
    cols = np.ascontiguousarray(cols).reshape(g_, n * ho * wo, kdim)
    wmat = weight.data.reshape(g_, og, kdim)
    out = np.matmul(cols, wmat.transpose(0, 2, 1))  # G, NHW, Og
    out = out.reshape(g_, n, ho, wo, og).transpose(1, 0, 4, 2, 3).reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(gout):
        gmat = gout.reshape(n, g_, og, ho, wo).transpose(1, 0, 3, 4, 2).reshape(g_, n * ho * wo, og)
        gw = np.matmul(gmat.transpose(0, 2, 1), cols).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(gmat, wmat).reshape(g_, n, ho, wo, cin_g, kh, kw)
            gcols = gcols.transpose(1, 0, 4, 2, 3, 5, 6).reshape(n, cin, ho, wo, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                        j : j + stride * (wo - 1) + 1 : stride] += gcols[..., i, j]
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(gout.sum(axis=(0, 2, 3)))
        return grads

    return make_result(out, parents, backward, "conv2d")


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                 running_var: np.ndarray, training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (N, H, W).

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance, exponential
    ``momentum``).  In eval mode the running statistics are used.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d expects (N, C, H, W), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm2d: affine params {gamma.shape}/{beta.shape} vs {c} channels")
    if eps <= 0:
        raise ConfigError("batch_norm2d: eps must be positive")
    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m == 0:
            raise ShapeError("batch_norm2d: empty batch in training mode")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out = out.astype(x.dtype, copy=False)

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            gx = (gxhat - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                  - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
            gx = gx * inv[None, :, None, None]
        else:
            gx = gxhat * inv[None, :, None, None]
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward, "batch_norm2d")


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def pool2d(x: Tensor, kind: str, k: int = 2, stride: int | None = None, padding: int = 0) -> Tensor:
    """``avg`` / ``max`` window pooling or ``global_avg`` (output 1x1).

    Max pooling pads with -inf; average pooling pads with zeros and always
    divides by k*k.  Windows must fit: ``k <= H + 2*padding``.
    """
    if x.ndim != 4:
        raise ShapeError(f"pool2d expects (N, C, H, W), got {x.shape}")
    if kind == "global_avg":
        return mean(x, axis=(2, 3), keepdims=True)
    if kind not in ("avg", "max"):
        raise ConfigError(f"unknown pooling kind {kind!r}")
    stride = k if stride is None else stride
    if k < 1 or stride < 1 or padding < 0 or 2 * padding > k:
        raise ShapeError(f"invalid pooling window k={k} stride={stride} padding={padding}")
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    fill = -np.inf if kind == "max" else 0.0
    xp = _pad_hw(x.data, padding, fill)
    win = _windows(xp, k, k, stride, ho, wo).reshape(n, c, ho, wo, k * k)

    if kind == "avg":
        out = win.mean(axis=-1)

        def backward(g):
            gxp = np.zeros_like(xp)
            share = g / (k * k)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                        j : j + stride * (wo - 1) + 1 : stride] += share
            return (gxp[:, :, padding : padding + h, padding : padding + w],)
    else:
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

        def backward(g):
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    hit = arg == i * k + j
                    gxp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                        j : j + stride * (wo - 1) + 1 : stride] += g * hit
            return (gxp[:, :, padding : padding + h, padding : padding + w],)

    return make_result(np.ascontiguousarray(out), (x,), backward, f"{kind}_pool")
