"""Central finite-difference gradient checks.

The checked scalar is ``sum(out * R)`` for a fixed random ``R``; a plain sum
would make e.g. softmax gradients vanish identically.  The error metric is
``|a - n| / max(|a|, |n|, 1e-8)`` maximised over every element of every
checked tensor.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .attention import LsaConfig, LocalSelfAttention, local_aggregate, local_matmul, position_bias
from .cot import MODES, CotBlock, CotConfig
from .tensor import Tensor

PRIMITIVE_TOL = 1e-5
COMPOSITE_TOL = 1e-4


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tolerance: float
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tolerance)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<34} max rel err {self.max_rel_error:.3e}  (tol {self.tolerance:.0e})"


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(fn: Callable[[], Tensor], tensors: Sequence[Tensor] | dict[str, Tensor],
               tolerance: float = PRIMITIVE_TOL, h: float = 1e-5, seed: int = 0,
               name: str = "") -> GradCheckReport:
    """Compare analytic gradients of ``fn()`` with central differences.

    ``fn`` takes no arguments and must read ``tensors`` (inputs and
    parameters); those are perturbed in place one element at a time.
    Failures are reported, not raised.
    """
    if not isinstance(tensors, dict):
        tensors = {f"t{i}": t for i, t in enumerate(tensors)}
    for t in tensors.values():
        if t.dtype != np.float64:
            raise TypeError("gradient checks need float64 tensors")
        t.requires_grad = True
        t.grad = None

    out = fn()
    # separate stream: reusing the case seed would make R equal the inputs
    proj = np.random.default_rng([seed, 0x9E37]).normal(size=out.shape)

    def scalar() -> float:
        return float((fn().data * proj).sum())

    loss = (out * Tensor(proj)).sum()
    loss.backward()

    per = {}
    for label, t in tensors.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        numeric = np.empty_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = scalar()
            flat[i] = orig - h
            fm = scalar()
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
        per[label] = float(relative_error(analytic, numeric).max()) if t.size else 0.0
        t.grad = None
    worst = max(per.values()) if per else 0.0
    return GradCheckReport(name, worst, tolerance, per)


# ---------------------------------------------------------------------------
# operator suite
# ---------------------------------------------------------------------------

def _t(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape))


def _case_conv(rng, groups=1, stride=1, padding=1, bias=True, cout=6):
    x = _t(rng, 2, 4, 5, 5)
    w = _t(rng, cout, 4 // groups, 3, 3, scale=0.5)
    b = _t(rng, cout) if bias else None
    ts = {"input": x, "weight": w}
    if b is not None:
        ts["bias"] = b
    return (lambda: F.conv2d(x, w, b, stride, padding, groups)), ts, PRIMITIVE_TOL


def _case_batch_norm(rng, training):
    x = _t(rng, 3, 4, 3, 3)
    g, b = _t(rng, 4), _t(rng, 4)
    rm, rv = rng.normal(size=4), rng.uniform(0.5, 2.0, size=4)

    def fn():
        return F.batch_norm2d(x, g, b, rm.copy(), rv.copy(), training)
    return fn, {"input": x, "gamma": g, "beta": b}, PRIMITIVE_TOL


def _case_pool(rng, kind):
    x = _t(rng, 2, 3, 6, 6)
    if kind == "max":
        return (lambda: F.pool2d(x, "max", 3, 2, padding=1)), {"input": x}, PRIMITIVE_TOL
    if kind == "avg":
        return (lambda: F.pool2d(x, "avg", 2, 2)), {"input": x}, PRIMITIVE_TOL
    return (lambda: F.pool2d(x, "global_avg")), {"input": x}, PRIMITIVE_TOL


def _case_elementwise(rng, kind):
    a, b = _t(rng, 2, 3, 4, 4), _t(rng, 2, 3, 4, 4)
    if kind == "relu":
        return (lambda: F.relu(a)), {"a": a}, PRIMITIVE_TOL
    if kind == "add":
        c = _t(rng, 1, 3, 1, 1)
        return (lambda: F.add(a, c)), {"a": a, "b": c}, PRIMITIVE_TOL
    if kind == "mul":
        c = _t(rng, 2, 3, 1, 1)
        return (lambda: F.mul(a, c)), {"a": a, "b": c}, PRIMITIVE_TOL
    if kind == "concat_channels":
        c = _t(rng, 2, 5, 4, 4)
        return (lambda: F.concat_channels([a, c])), {"a": a, "b": c}, PRIMITIVE_TOL
    return (lambda: F.scale(a, -2.5)), {"a": a}, PRIMITIVE_TOL


def _case_linear(rng):
    x, w, b = _t(rng, 3, 4), _t(rng, 2, 4), _t(rng, 2)
    return (lambda: F.linear(x, w, b)), {"input": x, "weight": w, "bias": b}, PRIMITIVE_TOL


def _case_softmax(rng):
    x = _t(rng, 2, 3, 4)
    return (lambda: F.softmax_axis(x, 1)), {"input": x}, PRIMITIVE_TOL


def _case_cross_entropy(rng):
    from .train import smoothed_cross_entropy
    logits = _t(rng, 4, 5)
    labels = rng.integers(0, 5, size=4)
    return (lambda: smoothed_cross_entropy(logits, labels, 0.1)), {"logits": logits}, PRIMITIVE_TOL


def _case_conv_relu_chain(rng):
    x = _t(rng, 2, 3, 5, 5)
    w1, w2 = _t(rng, 4, 3, 3, 3, scale=0.5), _t(rng, 2, 4, 1, 1)
    return (lambda: F.conv2d(F.relu(F.conv2d(x, w1, padding=1)), w2)), \
        {"input": x, "w1": w1, "w2": w2}, PRIMITIVE_TOL


def _case_local_matmul(rng):
    k, q = _t(rng, 2, 4, 4, 5), _t(rng, 2, 4, 4, 5)
    return (lambda: local_matmul(k, q, 3, 2)), {"keys": k, "queries": q}, PRIMITIVE_TOL


def _case_position_bias(rng):
    q, p = _t(rng, 2, 4, 4, 4), _t(rng, 3, 3, 2)
    return (lambda: position_bias(q, p, 2)), {"queries": q, "table": p}, PRIMITIVE_TOL


def _case_local_aggregate(rng):
    v, a = _t(rng, 2, 4, 4, 5), _t(rng, 2, 4, 5, 9, 2)
    return (lambda: local_aggregate(v, a)), {"values": v, "attn": a}, PRIMITIVE_TOL


def _module_case(module, x):
    ts = {"input": x}
    ts.update(dict(module.named_parameters()))
    return (lambda: module(x)), ts, COMPOSITE_TOL


def _case_lsa(rng):
    cfg = LsaConfig(channels=4, kernel=3, heads=2)
    m = LocalSelfAttention(cfg, rng, dtype=np.float64)
    return _module_case(m, _t(rng, 2, 4, 4, 4))


def _case_cot(rng, mode, stride=1, cardinality=1):
    cfg = CotConfig(channels=8, key_groups=2, share_channels=4, fusion_floor=4,
                    stride=stride, mode=mode, cardinality=cardinality)
    m = CotBlock(cfg, rng, dtype=np.float64)
    return _module_case(m, _t(rng, 4, 8, 6 if stride == 2 else 5, 6 if stride == 2 else 5))


SUITE: dict[str, Callable] = {
    "conv2d": lambda r: _case_conv(r),
    "conv2d_stride2": lambda r: _case_conv(r, stride=2, bias=False),
    "conv2d_grouped": lambda r: _case_conv(r, groups=2),
    "conv2d_depthwise": lambda r: _case_conv(r, groups=4, cout=8),
    "conv2d_relu_chain": _case_conv_relu_chain,
    "batch_norm2d_train": lambda r: _case_batch_norm(r, True),
    "batch_norm2d_eval": lambda r: _case_batch_norm(r, False),
    "softmax_axis": _case_softmax,
    "pool2d_max": lambda r: _case_pool(r, "max"),
    "pool2d_avg": lambda r: _case_pool(r, "avg"),
    "pool2d_global_avg": lambda r: _case_pool(r, "global_avg"),
    "linear": _case_linear,
    "relu": lambda r: _case_elementwise(r, "relu"),
    "add": lambda r: _case_elementwise(r, "add"),
    "mul": lambda r: _case_elementwise(r, "mul"),
    "concat_channels": lambda r: _case_elementwise(r, "concat_channels"),
    "scale": lambda r: _case_elementwise(r, "scale"),
    "smoothed_cross_entropy": _case_cross_entropy,
    "local_matmul": _case_local_matmul,
    "position_bias": _case_position_bias,
    "local_aggregate": _case_local_aggregate,
    "lsa_forward": _case_lsa,
    **{f"cot_{mode}": (lambda r, m=mode: _case_cot(r, m)) for mode in MODES},
    "cot_full_stride2": lambda r: _case_cot(r, "full", stride=2),
    "cot_full_cardinality2": lambda r: _case_cot(r, "full", cardinality=2),
}


def run_suite(ops: Sequence[str] | None = None, seeds: Sequence[int] = range(5)) -> list[GradCheckReport]:
    """Run the named cases (all by default) for every seed; one report per (case, seed)."""
    names = list(SUITE) if not ops or list(ops) == ["all"] else list(ops)
    unknown = [n for n in names if n not in SUITE]
    if unknown:
        raise KeyError(f"unknown gradcheck cases: {unknown}")
    reports = []
    for name in names:
        for seed in seeds:
            rng = np.random.default_rng(seed)
            fn, tensors, tol = SUITE[name](rng)
            reports.append(grad_check(fn, tensors, tolerance=tol, seed=seed, name=f"{name}[seed={seed}]"))
    return reports
