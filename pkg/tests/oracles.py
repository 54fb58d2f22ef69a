"""Naive nested-loop references, written for clarity rather than speed.

Every function works on plain numpy arrays and shares no code with the
library, so agreement is meaningful.
"""
import math

import numpy as np


def conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    n, cin, h, wd = x.shape
    cout, cpg, kh, kw = w.shape
    opg = cout // groups
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for b_ in range(n):
        for co in range(cout):
            g = co // opg
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else b[co]
                    for ci in range(cpg):
                        for u in range(kh):
                            for v in range(kw):
                                y = i * stride + u - padding
                                z = j * stride + v - padding
                                if 0 <= y < h and 0 <= z < wd:
                                    acc += w[co, ci, u, v] * x[b_, g * cpg + ci, y, z]
                    out[b_, co, i, j] = acc
    return out


def _neighbour(t, b, ch, y, x):
    """Zero-padded lookup."""
    if 0 <= y < t.shape[2] and 0 <= x < t.shape[3]:
        return t[b, ch, y, x]
    return 0.0


def local_matmul(keys, queries, k, heads):
    n, c, h, w = queries.shape
    d = c // heads
    r = k // 2
    out = np.zeros((n, h, w, k * k, heads))
    for b in range(n):
        for y in range(h):
            for x in range(w):
                for o in range(k * k):
                    dy, dx = o // k - r, o % k - r
                    for hd in range(heads):
                        out[b, y, x, o, hd] = sum(
                            queries[b, hd * d + e, y, x] * _neighbour(keys, b, hd * d + e, y + dy, x + dx)
                            for e in range(d))
    return out


def local_aggregate(values, attn):
    n, c, h, w = values.shape
    kk, heads = attn.shape[3:]
    k = int(round(math.sqrt(kk)))
    d = c // heads
    r = k // 2
    out = np.zeros_like(values, dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            hd = ch // d
            for y in range(h):
                for x in range(w):
                    out[b, ch, y, x] = sum(
                        attn[b, y, x, o, hd] * _neighbour(values, b, ch, y + o // k - r, x + o % k - r)
                        for o in range(kk))
    return out


def lsa_forward(x, wq, wk, wv, table, k, heads):
    """Local attention with relative position logits, one location at a time."""
    n, c, h, w = x.shape
    d = c // heads
    r = k // 2
    proj = lambda m: np.einsum("oc,nchw->nohw", m[:, :, 0, 0], x)  # noqa: E731
    q, key, v = proj(wq), proj(wk), proj(wv)
    out = np.zeros_like(x, dtype=np.float64)
    for b in range(n):
        for y in range(h):
            for z in range(w):
                for hd in range(heads):
                    sl = slice(hd * d, (hd + 1) * d)
                    logits, vals = [], []
                    for o in range(k * k):
                        dy, dx = o // k - r, o % k - r
                        yy, zz = y + dy, z + dx
                        inside = 0 <= yy < h and 0 <= zz < w
                        kv = key[b, sl, yy, zz] if inside else np.zeros(d)
                        vv = v[b, sl, yy, zz] if inside else np.zeros(d)
                        qv = q[b, sl, y, z]
                        logits.append(qv @ kv + qv @ table[o // k, o % k])
                        vals.append(vv)
                    logits = np.array(logits)
                    e = np.exp(logits - logits.max())
                    a = e / e.sum()
                    out[b, sl, y, z] = sum(a_i * v_i for a_i, v_i in zip(a, vals))
    return out
