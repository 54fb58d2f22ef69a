"""Declarative ResNet / ResNeXt / CoTNet / CoTNeXt construction.

A :class:`ModelSpec` lists a stem and four bottleneck stages.  Each stage's
spatial unit is either a grouped 3x3 convolution (``conv3x3``) or a CoT unit
(``cot``).  Canonical specs live in :data:`CANONICAL` and are mirrored as
YAML documents in ``cotnet/specs/``.

Spec file grammar (YAML, UTF-8)::

    name: <str>                 # required
    base: <canonical name>      # optional; start from that spec
    classes: <int>
    stem_width: <int>
    input_size: <int>           # nominal input side, informational
    cot:                        # CoT unit defaults (any subset)
      kernel / key_groups / share_channels / reduction /
      fusion_reduction / fusion_floor / softmax_attention / mode
    stages:                     # either a full list of four stage mappings ...
      - {name, blocks, kind, width, cardinality, out_channels, stride}
    stages:                     # ... or, with ``base``, overrides by stage name
      res5: {kind: cot}

For CoT stages the unit inherits the stage cardinality (key conv groups =
``key_groups * cardinality``; 1x1 projections grouped by ``cardinality``).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from . import functional as F
from .cot import CotBlock, CotConfig
from .nn import BatchNorm2d, Conv2d, Linear, Module
from .tensor import ConfigError, ShapeError, Tensor, get_default_dtype

STAGE_NAMES = ("res2", "res3", "res4", "res5")
KINDS = ("conv3x3", "cot")


@dataclass(frozen=True)
class CotDefaults:
    """Budget-calibrated CoT hyperparameters shared by every CoT stage of a model."""

    kernel: int = 3
    key_groups: int = 4
    share_channels: int = 8
    reduction: int = 4
    fusion_reduction: int = 2
    fusion_floor: int = 32
    softmax_attention: bool = True
    mode: str = "full"


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    width: int
    cardinality: int
    in_channels: int
    out_channels: int
    stride: int

    @property
    def needs_projection(self) -> bool:
        return self.stride != 1 or self.in_channels != self.out_channels


@dataclass(frozen=True)
class StageSpec:
    name: str
    blocks: int
    width: int
    out_channels: int
    kind: str = "conv3x3"
    cardinality: int = 1
    stride: int = 1

    @property
    def replace_with_cot(self) -> bool:
        return self.kind == "cot"

    def block_specs(self, in_channels: int) -> list[BlockSpec]:
        specs = []
        for i in range(self.blocks):
            specs.append(BlockSpec(self.kind, self.width, self.cardinality,
                                   in_channels if i == 0 else self.out_channels,
                                   self.out_channels, self.stride if i == 0 else 1))
        return specs


@dataclass(frozen=True)
class ModelSpec:
    name: str
    stages: tuple[StageSpec, ...]
    classes: int = 1000
    stem_width: int = 64
    input_size: int = 224
    cot: CotDefaults = field(default_factory=CotDefaults)

    def validate(self) -> None:
        if len(self.stages) != 4:
            raise ConfigError(f"{self.name}: expected 4 stages, got {len(self.stages)}")
        for i, st in enumerate(self.stages):
            if st.name != STAGE_NAMES[i]:
                raise ConfigError(f"{self.name}: stage {i} must be named {STAGE_NAMES[i]}, got {st.name}")
            if st.kind not in KINDS:
                raise ConfigError(f"{self.name}.{st.name}: unknown kind {st.kind!r}")
            want = 1 if i == 0 else 2
            if st.stride != want:
                raise ConfigError(f"{self.name}.{st.name}: first-block stride must be {want}")
            if st.blocks < 1 or st.width < 1 or st.out_channels < 1:
                raise ConfigError(f"{self.name}.{st.name}: blocks/width/out_channels must be positive")
            if st.width % st.cardinality:
                raise ConfigError(f"{self.name}.{st.name}: width {st.width} not divisible "
                                  f"by cardinality {st.cardinality}")
            if st.kind == "cot":
                cot_config(self, st.width, st.cardinality, st.stride)  # raises on inconsistent channel algebra

    def block_specs(self) -> list[tuple[str, list[BlockSpec]]]:
        out, cin = [], self.stem_width
        for st in self.stages:
            blocks = st.block_specs(cin)
            out.append((st.name, blocks))
            cin = st.out_channels
        return out


def cot_config(spec: ModelSpec, width: int, cardinality: int, stride: int) -> CotConfig:
    d = spec.cot
    return CotConfig(channels=width, kernel=d.kernel, key_groups=d.key_groups,
                     share_channels=d.share_channels, reduction=d.reduction,
                     fusion_reduction=d.fusion_reduction, fusion_floor=d.fusion_floor,
                     cardinality=cardinality, stride=stride,
                     softmax_attention=d.softmax_attention, mode=d.mode)


def _stages(widths, outs, blocks, kind="conv3x3", cardinality=1):
    return tuple(StageSpec(name, b, w, o, kind, cardinality, 1 if i == 0 else 2)
                 for i, (name, w, o, b) in enumerate(zip(STAGE_NAMES, widths, outs, blocks)))


_OUTS = (256, 512, 1024, 2048)
_B50, _B101 = (3, 4, 6, 3), (3, 4, 23, 3)
_RESNET_W = (64, 128, 256, 512)
_RESNEXT_W = (128, 256, 512, 1024)    # 32x4d
_COTNEXT_W = (96, 192, 384, 768)      # 2x48d
_TINY_OUTS = tuple(o // 8 for o in _OUTS)
_TINY_W = tuple(w // 8 for w in _RESNET_W)

CANONICAL: dict[str, ModelSpec] = {
    "resnet50": ModelSpec("resnet50", _stages(_RESNET_W, _OUTS, _B50)),
    "cotnet50": ModelSpec("cotnet50", _stages(_RESNET_W, _OUTS, _B50, "cot")),
    "resnext50": ModelSpec("resnext50", _stages(_RESNEXT_W, _OUTS, _B50, cardinality=32)),
    "cotnext50": ModelSpec("cotnext50", _stages(_COTNEXT_W, _OUTS, _B50, "cot", 2)),
    "resnet101": ModelSpec("resnet101", _stages(_RESNET_W, _OUTS, _B101)),
    "cotnet101": ModelSpec("cotnet101", _stages(_RESNET_W, _OUTS, _B101, "cot")),
    "resnext101": ModelSpec("resnext101", _stages(_RESNEXT_W, _OUTS, _B101, cardinality=32)),
    "cotnext101": ModelSpec("cotnext101", _stages(_COTNEXT_W, _OUTS, _B101, "cot", 2)),
    "resnet_tiny": ModelSpec("resnet_tiny", _stages(_TINY_W, _TINY_OUTS, (1, 1, 1, 1)),
                             classes=8, stem_width=8, input_size=32),
    "cotnet_tiny": ModelSpec("cotnet_tiny", _stages(_TINY_W, _TINY_OUTS, (1, 1, 1, 1), "cot"),
                             classes=8, stem_width=8, input_size=32),
}


def get_spec(name: str) -> ModelSpec:
    try:
        return CANONICAL[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; known: {', '.join(CANONICAL)}") from None


def stage_replacement_variant(base: ModelSpec, flags) -> ModelSpec:
    """Mark the stages selected by four res2..res5 flags as CoT stages."""
    flags = tuple(bool(f) for f in flags)
    if len(flags) != 4:
        raise ConfigError(f"expected 4 stage flags, got {len(flags)}")
    if not any(flags):
        return base
    stages = tuple(dataclasses.replace(st, kind="cot") if f else st for st, f in zip(base.stages, flags))
    if all(flags) and base.name.startswith("resnet"):
        name = base.name.replace("resnet", "cotnet", 1)
    else:
        name = f"{base.name}-cot{''.join('1' if f else '0' for f in flags)}"
    return dataclasses.replace(base, name=name, stages=stages)


# ---------------------------------------------------------------------------
# spec documents
# ---------------------------------------------------------------------------

def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "name": spec.name,
        "classes": spec.classes,
        "stem_width": spec.stem_width,
        "input_size": spec.input_size,
        "cot": dataclasses.asdict(spec.cot),
        "stages": [dataclasses.asdict(st) for st in spec.stages],
    }


def dump_spec(spec: ModelSpec) -> str:
    header = (f"# {spec.name}: stem 7x7/2 conv + 3x3/2 max pool, four bottleneck stages,\n"
              "# global average pool + fc.  kind: conv3x3 | cot; cardinality = groups of the spatial unit.\n")
    return header + yaml.safe_dump(spec_to_dict(spec), sort_keys=False, default_flow_style=None)


def spec_from_dict(doc: dict) -> ModelSpec:
    if not isinstance(doc, dict) or "name" not in doc and "base" not in doc:
        raise ConfigError("spec document needs at least a 'name' or a 'base'")
    base = get_spec(doc["base"]) if "base" in doc else None
    cot_doc = doc.get("cot", {}) or {}
    unknown = set(cot_doc) - {f.name for f in dataclasses.fields(CotDefaults)}
    if unknown:
        raise ConfigError(f"unknown cot fields: {sorted(unknown)}")
    cot = dataclasses.replace(base.cot if base else CotDefaults(), **cot_doc)

    stages_doc = doc.get("stages")
    if stages_doc is None:
        if base is None:
            raise ConfigError("spec without 'base' must list its stages")
        stages = base.stages
    elif isinstance(stages_doc, dict):
        if base is None:
            raise ConfigError("stage overrides by name require a 'base'")
        bad = set(stages_doc) - set(STAGE_NAMES)
        if bad:
            raise ConfigError(f"unknown stages: {sorted(bad)}")
        stages = tuple(dataclasses.replace(st, **stages_doc.get(st.name, {})) for st in base.stages)
    else:
        stages = tuple(StageSpec(**st) for st in stages_doc)

    fields = {k: doc[k] for k in ("classes", "stem_width", "input_size") if k in doc}
    name = doc.get("name", base.name if base else None)
    if base is not None:
        spec = dataclasses.replace(base, name=name, stages=stages, cot=cot, **fields)
    else:
        spec = ModelSpec(name=name, stages=stages, cot=cot, **fields)
    spec.validate()
    return spec


def load_spec(text: str) -> ModelSpec:
    return spec_from_dict(yaml.safe_load(text))


def canonical_spec_text(name: str) -> str:
    """Text of the shipped spec document for a canonical model."""
    return resources.files("cotnet").joinpath("specs", f"{name}.yaml").read_text(encoding="utf-8")


def resolve_spec(name_or_path: str) -> ModelSpec:
    if name_or_path in CANONICAL:
        return CANONICAL[name_or_path]
    if name_or_path.endswith((".yaml", ".yml")):
        with open(name_or_path, encoding="utf-8") as fh:
            return load_spec(fh.read())
    return get_spec(name_or_path)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

class Bottleneck(Module):
    """1x1 reduce -> spatial unit (3x3 conv or CoT) -> 1x1 expand, plus shortcut."""

    def __init__(self, bs: BlockSpec, spec: ModelSpec, rng: np.random.Generator, dtype):
        self.spec = bs
        self.conv1 = Conv2d(bs.in_channels, bs.width, 1, rng, dtype=dtype)
        self.bn1 = BatchNorm2d(bs.width, dtype=dtype)
        if bs.kind == "cot":
            self.cot = CotBlock(cot_config(spec, bs.width, bs.cardinality, bs.stride), rng, dtype=dtype)
        else:
            self.conv2 = Conv2d(bs.width, bs.width, 3, rng, stride=bs.stride, groups=bs.cardinality, dtype=dtype)
        self.bn2 = BatchNorm2d(bs.width, dtype=dtype)
        self.conv3 = Conv2d(bs.width, bs.out_channels, 1, rng, dtype=dtype)
        self.bn3 = BatchNorm2d(bs.out_channels, zero_init=True, dtype=dtype)
        if bs.needs_projection:
            self.shortcut_conv = Conv2d(bs.in_channels, bs.out_channels, 1, rng, stride=bs.stride,
                                        padding=0, dtype=dtype)
            self.shortcut_norm = BatchNorm2d(bs.out_channels, dtype=dtype)

    def spatial(self, x: Tensor) -> Tensor:
        return self.cot(x) if self.spec.kind == "cot" else self.conv2(x)

    def forward(self, x: Tensor) -> Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.spatial(out)))
        out = self.bn3(self.conv3(out))
        identity = self.shortcut_norm(self.shortcut_conv(x)) if self.spec.needs_projection else x
        return F.relu(out + identity)


class Stage(Module):
    def __init__(self, blocks: list[BlockSpec], spec: ModelSpec, rng, dtype):
        self.num_blocks = len(blocks)
        for i, bs in enumerate(blocks, 1):
            setattr(self, f"block{i}", Bottleneck(bs, spec, rng, dtype))

    def blocks(self) -> list[Bottleneck]:
        return [getattr(self, f"block{i}") for i in range(1, self.num_blocks + 1)]

    def forward(self, x: Tensor) -> Tensor:
        for b in self.blocks():
            x = b(x)
        return x


class Network(Module):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator, dtype=None):
        dtype = dtype or get_default_dtype()
        self.spec = spec
        self.stem_conv = Conv2d(3, spec.stem_width, 7, rng, stride=2, padding=3, dtype=dtype)
        self.stem_norm = BatchNorm2d(spec.stem_width, dtype=dtype)
        for name, blocks in spec.block_specs():
            setattr(self, name, Stage(blocks, spec, rng, dtype))
        self.fc = Linear(spec.stages[-1].out_channels, spec.classes, rng, dtype=dtype)
        self.assign_names()

    def stages(self) -> list[tuple[str, Stage]]:
        return [(name, getattr(self, name)) for name in STAGE_NAMES]

    def forward_features(self, x: Tensor) -> dict[str, Tensor]:
        """Stage outputs keyed res1..res5 plus ``pool`` (N, C) features."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected an (N, 3, H, W) batch, got {x.shape}")
        feats = {}
        out = F.relu(self.stem_norm(self.stem_conv(x)))
        feats["res1"] = out
        out = F.pool2d(out, "max", 3, 2, padding=1)
        for name, stage in self.stages():
            out = stage(out)
            feats[name] = out
        feats["pool"] = F.pool2d(out, "global_avg").reshape(out.shape[0], out.shape[1])
        return feats

    def forward(self, x: Tensor, mode: str | None = None) -> Tensor:
        if mode is not None:
            if mode not in ("train", "eval"):
                raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
            self.train(mode == "train")
        return self.fc(self.forward_features(x)["pool"])


def build_model(spec: ModelSpec | str, seed: int = 0, dtype=None) -> Network:
    """Build a network with deterministic seeded initialization."""
    if isinstance(spec, str):
        spec = resolve_spec(spec)
    spec.validate()
    return Network(spec, np.random.default_rng(seed), dtype=dtype)
