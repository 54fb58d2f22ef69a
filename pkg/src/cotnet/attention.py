"""Local multi-head self-attention over k x k windows.

Relation maps have shape ``(N, H, W, k*k, heads)``.  The offset axis
enumerates the window row-major, so offset ``o`` is the displacement
``(o // k - k // 2, o % k - k // 2)`` and the centre sits at ``(k*k - 1) // 2``.
Head ``h`` owns the contiguous channel slice ``[h*d, (h+1)*d)``.

Out-of-image neighbours are zero vectors: keys and values are zero padded,
and the softmax still runs over all k*k logits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .nn import Conv2d, Module
from .tensor import ConfigError, Parameter, ShapeError, Tensor, get_default_dtype, make_result


@dataclass(frozen=True)
class LsaConfig:
    channels: int
    kernel: int = 3
    heads: int = 1

    def __post_init__(self):
        if self.channels < 1 or self.heads < 1 or self.channels % self.heads:
            raise ConfigError(f"channels={self.channels} not divisible by heads={self.heads}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd, got {self.kernel}")

    @property
    def head_dim(self) -> int:
        # per-head width of the position table as well as of Q/K/V slices
        return self.channels // self.heads


def _check_heads(x: Tensor, heads: int) -> int:
    if x.ndim != 4:
        raise ShapeError(f"expected (N, C, H, W), got {x.shape}")
    if heads < 1 or x.shape[1] % heads:
        raise ConfigError(f"{x.shape[1]} channels not divisible by {heads} heads")
    return x.shape[1] // heads


def _shifts(k: int, h: int, w: int):
    for o in range(k * k):
        di, dj = divmod(o, k)
        yield o, (Ellipsis, slice(di, di + h), slice(dj, dj + w))


def local_matmul(keys: Tensor, queries: Tensor, k: int, heads: int) -> Tensor:
    """Per-head dot products between each query and the keys in its k x k window.

    ``out[n, y, x, o, h] = <Q_h(y, x), K_h((y, x) + offset(o))>``.
    """
    if keys.shape != queries.shape:
        raise ShapeError(f"keys {keys.shape} and queries {queries.shape} differ")
    d = _check_heads(queries, heads)
    n, c, h, w = queries.shape
    p = k // 2
    kp = np.pad(keys.data, ((0, 0), (0, 0), (p, p), (p, p))).reshape(n, heads, d, h + 2 * p, w + 2 * p)
    qr = queries.data.reshape(n, heads, d, h, w)
    out = np.empty((n, h, w, k * k, heads), dtype=queries.dtype)
    for o, sl in _shifts(k, h, w):
        out[:, :, :, o, :] = (qr * kp[sl]).sum(axis=2).transpose(0, 2, 3, 1)

    def backward(g):
        gq = np.zeros_like(qr)
        gkp = np.zeros_like(kp)
        for o, sl in _shifts(k, h, w):
            go = g[:, :, :, o, :].transpose(0, 3, 1, 2)[:, :, None]
            gq += go * kp[sl]
            gkp[sl] += go * qr
        gk = gkp[..., p : p + h, p : p + w].reshape(n, c, h, w)
        return gk, gq.reshape(n, c, h, w)

    return make_result(out, (keys, queries), backward, "local_matmul")


def position_bias(queries: Tensor, table: Tensor, heads: int) -> Tensor:
    """``out[n, y, x, o, h] = <Q_h(y, x), P[o]>`` with one table shared by all heads."""
    d = _check_heads(queries, heads)
    k = table.shape[0]
    if table.shape != (k, k, d):
        raise ShapeError(f"position table {table.shape} does not match (k, k, head_dim={d})")
    n, c, h, w = queries.shape
    qr = queries.data.reshape(n, heads, d, h, w)
    pm = table.data.reshape(k * k, d)
    out = np.einsum("nhdyx,od->nyxoh", qr, pm, optimize=True)

    def backward(g):
        gq = np.einsum("nyxoh,od->nhdyx", g, pm, optimize=True).reshape(n, c, h, w)
        gp = np.einsum("nyxoh,nhdyx->od", g, qr, optimize=True).reshape(table.shape)
        return gq, gp

    return make_result(np.ascontiguousarray(out), (queries, table), backward, "position_bias")


def local_aggregate(values: Tensor, attn: Tensor) -> Tensor:
    """Weighted sum of zero-padded values over each window, one weight map per head.

    ``out_h(y, x) = sum_o attn[n, y, x, o, h] * V_h((y, x) + offset(o))``.
    Shared by the baseline attention and the CoT dynamic context.
    """
    n, c, h, w = values.shape
    if attn.ndim != 5 or attn.shape[:3] != (n, h, w):
        raise ShapeError(f"attention map {attn.shape} does not match values {values.shape}")
    kk, heads = attn.shape[3], attn.shape[4]
    k = int(round(kk ** 0.5))
    if k * k != kk or k % 2 == 0:
        raise ShapeError(f"offset axis {kk} is not an odd square")
    d = _check_heads(values, heads)
    p = k // 2
    vp = np.pad(values.data, ((0, 0), (0, 0), (p, p), (p, p))).reshape(n, heads, d, h + 2 * p, w + 2 * p)
    a = attn.data
    out = np.zeros((n, heads, d, h, w), dtype=np.result_type(values.dtype, attn.dtype))
    for o, sl in _shifts(k, h, w):
        out += a[:, :, :, o, :].transpose(0, 3, 1, 2)[:, :, None] * vp[sl]

    def backward(g):
        gr = g.reshape(n, heads, d, h, w)
        ga = np.empty_like(a)
        gvp = np.zeros_like(vp)
        for o, sl in _shifts(k, h, w):
            ga[:, :, :, o, :] = (gr * vp[sl]).sum(axis=2).transpose(0, 2, 3, 1)
            gvp[sl] += a[:, :, :, o, :].transpose(0, 3, 1, 2)[:, :, None] * gr
        gv = gvp[..., p : p + h, p : p + w].reshape(n, c, h, w)
        return gv, ga

    return make_result(out.reshape(n, c, h, w), (values, attn), backward, "local_aggregate")


def lsa_forward(x: Tensor, w_query: Tensor, w_key: Tensor, w_value: Tensor, table: Tensor,
                config: LsaConfig, relation_bias=None, return_attention: bool = False):
    """Baseline local self-attention with relative position logits.

    ``w_*`` are 1x1 convolution kernels of shape (C, C, 1, 1).  ``relation_bias``
    is an optional additive term on the logits (broadcast to the relation map),
    e.g. a mask.
    """
    if x.ndim != 4 or x.shape[1] != config.channels:
        raise ShapeError(f"input {x.shape} does not have {config.channels} channels")
    q = F.conv2d(x, w_query)
    kmap = F.conv2d(x, w_key)
    v = F.conv2d(x, w_value)
    logits = local_matmul(kmap, q, config.kernel, config.heads)
    logits = logits + position_bias(q, table, config.heads)
    if relation_bias is not None:
        logits = logits + relation_bias
    attn = F.softmax_axis(logits, axis=3)
    y = local_aggregate(v, attn)
    return (y, attn) if return_attention else y


class LocalSelfAttention(Module):
    """Module wrapper holding W_q, W_k, W_v and the position table."""

    def __init__(self, config: LsaConfig, rng: np.random.Generator, dtype=None):
        dtype = dtype or get_default_dtype()
        c = config.channels
        self.config = config
        self.query_conv = Conv2d(c, c, 1, rng, dtype=dtype)
        self.key_conv = Conv2d(c, c, 1, rng, dtype=dtype)
        self.value_conv = Conv2d(c, c, 1, rng, dtype=dtype)
        k, d = config.kernel, config.head_dim
        self.position = Parameter(rng.normal(0.0, 0.02, size=(k, k, d)), dtype=dtype)

    def forward(self, x: Tensor, return_attention: bool = False):
        return lsa_forward(x, self.query_conv.weight, self.key_conv.weight, self.value_conv.weight,
                           self.position, self.config, return_attention=return_attention)
