"""Analytic parameter and multiply-accumulate accounting.

Counting convention: one FLOP is one multiply-accumulate (MAC), per image.
Counted: convolutions, fully connected layers, and the local attention
products (one H*W*k*k*C pass each for relation, position logits and value
aggregation).  Not counted: normalization, activations, pooling, softmax and
elementwise adds.  Shapes are propagated symbolically; nothing is executed.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import singledispatch

from .attention import LocalSelfAttention
from .cot import CotBlock
from .functional import conv_output_size
from .nn import BatchNorm2d, Conv2d, Linear, Module
from .tensor import ShapeError
from .zoo import Bottleneck, Network, Stage, build_model, resolve_spec

CONVENTION = ("1 FLOP = 1 multiply-accumulate per image; counted: conv, linear, local attention "
              "relation/aggregation; ignored: norm, relu, pooling, softmax, elementwise adds")

# Reported budgets at 224x224: (params, FLOPs, params tolerance, FLOPs tolerance).
# resnet50 / cotnet50: ResNet-50 vs CoTNet-50 structure table; resnext50 / cotnext50:
# ResNeXt-50 (32x4d) vs CoTNeXt-50 (2x48d) structure table.  CoT tolerances are wider
# because the internal widths of the unit are calibrated rather than published.
PAPER_BUDGETS = {
    "resnet50": (25.56e6, 4.12e9, 0.005, 0.02),
    "resnext50": (25.03e6, 4.27e9, 0.005, 0.02),
    "cotnet50": (22.21e6, 3.28e9, 0.05, 0.05),
    "cotnext50": (30.05e6, 4.33e9, 0.05, 0.05),
}

# Rounded figures from the ImageNet comparison table (101-layer rows) and the
# stage-replacement table; informational, reported with a 5% band.
PAPER_BUDGETS_INFO = {
    "resnet101": (44.6e6, 7.9e9),
    "resnext101": (44.2e6, 8.0e9),
    "cotnet101": (38.3e6, 6.1e9),
    "cotnext101": (53.4e6, 8.2e9),
    "resnet50-cot0001": (23.5e6, 4.0e9),
    "resnet50-cot0011": (22.4e6, 3.7e9),
    "resnet50-cot0111": (22.3e6, 3.4e9),
}


@dataclass
class LayerCost:
    path: str
    params: int
    macs: int


@dataclass
class CostReport:
    rows: list[LayerCost]
    input_hw: int | None
    shapes: dict[str, tuple[int, int, int]] = field(default_factory=dict)
    convention: str = CONVENTION

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def by_prefix(self, prefix: str) -> tuple[int, int]:
        sel = [r for r in self.rows if r.path == prefix or r.path.startswith(prefix + ".")]
        return sum(r.params for r in sel), sum(r.macs for r in sel)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer_path", "params", "macs"])
        for r in self.rows:
            w.writerow([r.path, r.params, r.macs])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"# {self.convention}", f"# input: {self.input_hw}x{self.input_hw}" if self.input_hw else
                 "# input: n/a (parameters only)"]
        width = max([len(r.path) for r in self.rows] + [10])
        for r in self.rows:
            lines.append(f"{r.path:<{width}}  {r.params:>12,d}  {r.macs:>16,d}")
        lines.append(f"{'TOTAL':<{width}}  {self.total_params:>12,d}  {self.total_macs:>16,d}")
        return "\n".join(lines)


def _own_params(m: Module) -> int:
    return sum(v.size for v in (getattr(m, "weight", None), getattr(m, "bias", None)) if v is not None)


@singledispatch
def _walk(m: Module, shape, path, rows):
    raise TypeError(f"no cost rule for {type(m).__name__}")


@_walk.register
def _(m: Conv2d, shape, path, rows):
    c, h, w = shape
    if c != m.cin:
        raise ShapeError(f"{path}: expects {m.cin} channels, got {c}")
    ho, wo = m.output_hw(h, w)
    rows.append(LayerCost(path, _own_params(m), m.macs(ho, wo)))
    return m.cout, ho, wo


@_walk.register
def _(m: BatchNorm2d, shape, path, rows):
    rows.append(LayerCost(path, _own_params(m), 0))
    return shape


@_walk.register
def _(m: Linear, shape, path, rows):
    rows.append(LayerCost(path, _own_params(m), m.cin * m.cout))
    return (m.cout,)


@_walk.register
def _(m: LocalSelfAttention, shape, path, rows):
    c, h, w = shape
    for name in ("query_conv", "key_conv", "value_conv"):
        _walk(getattr(m, name), shape, f"{path}.{name}", rows)
    kk = m.config.kernel ** 2
    rows.append(LayerCost(f"{path}.position", m.position.size, h * w * kk * c))
    rows.append(LayerCost(f"{path}.relation", 0, h * w * kk * c))
    rows.append(LayerCost(f"{path}.aggregate", 0, h * w * kk * c))
    return shape


@_walk.register
def _(m: CotBlock, shape, path, rows):
    cfg = m.config
    c, h, w = shape
    if cfg.stride == 2:
        h, w = conv_output_size(h, 2, 2, 0), conv_output_size(w, 2, 2, 0)
    inner = (c, h, w)
    _walk(m.key_conv, inner, f"{path}.key_conv", rows)
    _walk(m.key_norm, inner, f"{path}.key_norm", rows)
    if cfg.mode == "static_only":
        return inner
    _walk(m.value_conv, inner, f"{path}.value_conv", rows)
    _walk(m.value_norm, inner, f"{path}.value_norm", rows)
    t = _walk(m.theta_conv, (2 * c, h, w), f"{path}.theta_conv", rows)
    _walk(m.theta_norm, t, f"{path}.theta_norm", rows)
    _walk(m.delta_conv, t, f"{path}.delta_conv", rows)
    rows.append(LayerCost(f"{path}.aggregate", 0, h * w * cfg.kernel ** 2 * c))
    if cfg.mode == "full":
        z = _walk(m.fuse_squeeze, (c, 1, 1), f"{path}.fuse_squeeze", rows)
        _walk(m.fuse_norm, z, f"{path}.fuse_norm", rows)
        _walk(m.fuse_excite1, z, f"{path}.fuse_excite1", rows)
        _walk(m.fuse_excite2, z, f"{path}.fuse_excite2", rows)
    return inner


@_walk.register
def _(m: Bottleneck, shape, path, rows):
    out = _walk(m.conv1, shape, f"{path}.conv1", rows)
    _walk(m.bn1, out, f"{path}.bn1", rows)
    if m.spec.kind == "cot":
        out = _walk(m.cot, out, f"{path}.cot", rows)
    else:
        out = _walk(m.conv2, out, f"{path}.conv2", rows)
    _walk(m.bn2, out, f"{path}.bn2", rows)
    out = _walk(m.conv3, out, f"{path}.conv3", rows)
    _walk(m.bn3, out, f"{path}.bn3", rows)
    if m.spec.needs_projection:
        sc = _walk(m.shortcut_conv, shape, f"{path}.shortcut_conv", rows)
        _walk(m.shortcut_norm, sc, f"{path}.shortcut_norm", rows)
        if sc != out:
            raise ShapeError(f"{path}: shortcut {sc} does not match residual {out}")
    elif shape != out:
        raise ShapeError(f"{path}: identity shortcut {shape} does not match residual {out}")
    return out


@_walk.register
def _(m: Stage, shape, path, rows):
    for i, block in enumerate(m.blocks(), 1):
        shape = _walk(block, shape, f"{path}.block{i}", rows)
    return shape


def _profile_network(net: Network, hw: int) -> CostReport:
    rows: list[LayerCost] = []
    shapes = {}
    shape = _walk(net.stem_conv, (3, hw, hw), "stem_conv", rows)
    _walk(net.stem_norm, shape, "stem_norm", rows)
    shapes["res1"] = shape
    c, h, w = shape
    shape = (c, conv_output_size(h, 3, 2, 1), conv_output_size(w, 3, 2, 1))
    for name, stage in net.stages():
        shape = _walk(stage, shape, name, rows)
        shapes[name] = shape
    _walk(net.fc, (shape[0],), "fc", rows)
    return CostReport(rows, hw, shapes)


def count_flops(net: Module, input_hw: int) -> CostReport:
    """Per-layer params and MACs for one ``input_hw`` x ``input_hw`` image."""
    if input_hw < 1:
        raise ShapeError(f"invalid input size {input_hw}")
    if isinstance(net, Network):
        return _profile_network(net, input_hw)
    raise TypeError("count_flops expects a Network; use profile_module for single layers")


def profile_module(m: Module, shape, path: str = "") -> CostReport:
    """Cost rows for a single layer given its (C, H, W) (or (C,) for linear) input."""
    rows: list[LayerCost] = []
    out = _walk(m, tuple(shape), path or type(m).__name__, rows)
    report = CostReport(rows, shape[-1] if len(shape) == 3 else None)
    report.shapes["output"] = out
    return report


def count_params(net: Module) -> CostReport:
    """Exact parameter counts per layer; independent of the input size."""
    if isinstance(net, Network):
        # any valid resolution gives the same parameter rows
        report = _profile_network(net, net.spec.input_size)
    else:
        rows = [LayerCost(name, p.size, 0) for name, p in net.named_parameters()]
        report = CostReport(rows, None)
    return CostReport([LayerCost(r.path, r.params, 0) for r in report.rows], None)


# ---------------------------------------------------------------------------
# budget comparison
# ---------------------------------------------------------------------------

@dataclass
class BudgetRow:
    model: str
    params: int
    macs: int
    ref_params: float | None = None
    ref_macs: float | None = None
    params_tol: float | None = None
    macs_tol: float | None = None

    @property
    def params_delta(self) -> float | None:
        return None if self.ref_params is None else self.params / self.ref_params - 1

    @property
    def macs_delta(self) -> float | None:
        return None if self.ref_macs is None else self.macs / self.ref_macs - 1

    @property
    def status(self) -> str:
        if self.ref_params is None:
            return "n/a"
        ok = abs(self.params_delta) <= self.params_tol and abs(self.macs_delta) <= self.macs_tol
        return "pass" if ok else "fail"


@dataclass
class BudgetTable:
    rows: list[BudgetRow]
    input_hw: int

    def row(self, model: str) -> BudgetRow:
        for r in self.rows:
            if r.model == model:
                return r
        raise KeyError(model)

    @property
    def ok(self) -> bool:
        return all(r.status != "fail" for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "params", "macs", "ref_params", "ref_macs",
                    "params_delta", "macs_delta", "params_tol", "macs_tol", "status"])
        for r in self.rows:
            fmt = lambda v, p=6: "" if v is None else f"{v:.{p}f}"  # noqa: E731
            w.writerow([r.model, r.params, r.macs,
                        "" if r.ref_params is None else int(r.ref_params),
                        "" if r.ref_macs is None else int(r.ref_macs),
                        fmt(r.params_delta), fmt(r.macs_delta), fmt(r.params_tol, 3),
                        fmt(r.macs_tol, 3), r.status])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"# {CONVENTION}", f"# input {self.input_hw}x{self.input_hw}",
                 f"{'model':<18} {'params(M)':>10} {'ref':>7} {'d%':>7} {'GMACs':>8} {'ref':>6} {'d%':>7}  status"]
        for r in self.rows:
            pd = "" if r.params_delta is None else f"{100 * r.params_delta:+.2f}"
            md = "" if r.macs_delta is None else f"{100 * r.macs_delta:+.2f}"
            rp = "" if r.ref_params is None else f"{r.ref_params / 1e6:.2f}"
            rm = "" if r.ref_macs is None else f"{r.ref_macs / 1e9:.2f}"
            lines.append(f"{r.model:<18} {r.params / 1e6:>10.3f} {rp:>7} {pd:>7} "
                         f"{r.macs / 1e9:>8.3f} {rm:>6} {md:>7}  {r.status}")
        return "\n".join(lines)


def budget_table(models, input_hw: int = 224) -> BudgetTable:
    """Compare computed budgets with the embedded reference values.

    ``models`` may hold canonical names, spec-file paths or ``ModelSpec`` objects.
    """
    rows = []
    for m in models:
        spec = resolve_spec(m) if isinstance(m, str) else m
        report = count_flops(build_model(spec, seed=0, dtype="float32"), input_hw)
        row = BudgetRow(spec.name, report.total_params, report.total_macs)
        if input_hw == 224 and spec.name in PAPER_BUDGETS:
            row.ref_params, row.ref_macs, row.params_tol, row.macs_tol = PAPER_BUDGETS[spec.name]
        elif input_hw == 224 and spec.name in PAPER_BUDGETS_INFO:
            row.ref_params, row.ref_macs = PAPER_BUDGETS_INFO[spec.name]
            row.params_tol = row.macs_tol = 0.05
        rows.append(row)
    return BudgetTable(rows, input_hw)
