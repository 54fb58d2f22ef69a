"""Contextual Transformer (CoT) unit.

Pipeline for an input map X (channels C):

    K1 = relu(bn(groupconv_kxk(X)))                  static context
    A  = softmax_k2(delta(relu(bn(theta([K1, X])))))  per-head k*k weights
    V  = bn(conv1x1(X))
    K2 = local_aggregate(V, A)                        dynamic context
    Y  = w1 * K1 + w2 * K2                            selective-kernel fusion

``w1, w2`` come from a softmax over the two branches of per-channel logits
computed from ``global_avg(K1 + K2)``.

Cardinality (ResNeXt-style templates) splits the unit into independent
cardinal groups: the key conv uses ``key_groups * cardinality`` groups and
value / theta / delta projections are grouped by ``cardinality``.  The theta
input interleaves K1 and X per cardinal group so each group sees its own
slice of both.

Closed-form parameter count (cardinality c, k = kernel, m = theta width,
h = heads, d = fusion width, batch-norm affine pairs included)::

    k*k*C*C/(key_groups*c) + 2C          key conv + norm
    C*C/c + 2C                           value conv + norm
    2C*m/c + 2m                          theta conv + norm
    m*k*k*h/c + k*k*h                    delta conv (+bias)
    C*d + 2d + 2*(d*C + C)               fusion squeeze + norm, two excitations
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .attention import local_aggregate
from .nn import BatchNorm2d, Conv2d, Module
from .tensor import ConfigError, ShapeError, Tensor, get_default_dtype

MODES = ("static_only", "dynamic_only", "linear_fusion", "full")
# modes a block can run given the mode it was built for
_RUNNABLE = {
    "static_only": MODES[:1],
    "dynamic_only": MODES[:3],
    "linear_fusion": MODES[:3],
    "full": MODES,
}


@dataclass(frozen=True)
class CotConfig:
    channels: int
    kernel: int = 3
    key_groups: int = 4
    share_channels: int = 8
    reduction: int = 4
    fusion_reduction: int = 2
    fusion_floor: int = 32
    cardinality: int = 1
    stride: int = 1
    softmax_attention: bool = True
    mode: str = "full"

    def __post_init__(self):
        c = self.channels
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd, got {self.kernel}")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown CoT mode {self.mode!r}; expected one of {MODES}")
        for label, v in (("key_groups", self.key_groups), ("share_channels", self.share_channels),
                         ("reduction", self.reduction), ("fusion_reduction", self.fusion_reduction),
                         ("fusion_floor", self.fusion_floor), ("cardinality", self.cardinality)):
            if v < 1:
                raise ConfigError(f"{label} must be >= 1, got {v}")
        if c % self.key_conv_groups:
            raise ConfigError(f"channels={c} not divisible by key conv groups={self.key_conv_groups}")
        if c % self.share_channels:
            raise ConfigError(f"channels={c} not divisible by share_channels={self.share_channels}")
        if self.heads % self.cardinality or self.theta_dim % self.cardinality:
            raise ConfigError(f"heads={self.heads} / theta width={self.theta_dim} "
                              f"not divisible by cardinality={self.cardinality}")

    @property
    def key_conv_groups(self) -> int:
        return self.key_groups * self.cardinality

    @property
    def heads(self) -> int:
        return self.channels // self.share_channels

    @property
    def theta_dim(self) -> int:
        return max(2 * self.channels // self.reduction, 1)

    @property
    def fusion_dim(self) -> int:
        return max(self.channels // self.fusion_reduction, self.fusion_floor)

    @property
    def center(self) -> int:
        return (self.kernel * self.kernel - 1) // 2


class CotBlock(Module):
    """CoT unit; layers not needed by ``config.mode`` are not created."""

    def __init__(self, config: CotConfig, rng: np.random.Generator, dtype=None):
        dtype = dtype or get_default_dtype()
        cfg = self.config = config
        c, k, card = cfg.channels, cfg.kernel, cfg.cardinality
        self.key_conv = Conv2d(c, c, k, rng, groups=cfg.key_conv_groups, dtype=dtype)
        self.key_norm = BatchNorm2d(c, dtype=dtype)
        if cfg.mode != "static_only":
            m = cfg.theta_dim
            self.value_conv = Conv2d(c, c, 1, rng, groups=card, dtype=dtype)
            self.value_norm = BatchNorm2d(c, dtype=dtype)
            self.theta_conv = Conv2d(2 * c, m, 1, rng, groups=card, dtype=dtype)
            self.theta_norm = BatchNorm2d(m, dtype=dtype)
            self.delta_conv = Conv2d(m, k * k * cfg.heads, 1, rng, groups=card, bias=True, dtype=dtype)
        if cfg.mode == "full":
            d = cfg.fusion_dim
            self.fuse_squeeze = Conv2d(c, d, 1, rng, dtype=dtype)
            self.fuse_norm = BatchNorm2d(d, dtype=dtype)
            self.fuse_excite1 = Conv2d(d, c, 1, rng, bias=True, dtype=dtype)
            self.fuse_excite2 = Conv2d(d, c, 1, rng, bias=True, dtype=dtype)

    # -- stages of the unit -------------------------------------------------
    def static_context(self, x: Tensor) -> Tensor:
        return F.relu(self.key_norm(self.key_conv(x)))

    def value(self, x: Tensor) -> Tensor:
        return self.value_norm(self.value_conv(x))

    def _theta_input(self, k1: Tensor, q: Tensor) -> Tensor:
        card = self.config.cardinality
        if card == 1:
            return F.concat_channels([k1, q])
        cg = self.config.channels // card
        parts = []
        for g in range(card):
            sl = (slice(None), slice(g * cg, (g + 1) * cg))
            parts += [k1[sl], q[sl]]
        return F.concat_channels(parts)

    def attention_logits(self, k1: Tensor, q: Tensor) -> Tensor:
        """Unnormalized relation map (N, H, W, k*k, heads) from [K1, Q]."""
        if k1.shape != q.shape:
            raise ShapeError(f"static context {k1.shape} and query {q.shape} differ")
        z = F.relu(self.theta_norm(self.theta_conv(self._theta_input(k1, q))))
        z = self.delta_conv(z)
        n, _, h, w = z.shape
        kk, heads = self.config.kernel ** 2, self.config.heads
        # delta channels are head-major so cardinal groups own whole heads
        return z.reshape(n, heads, kk, h, w).transpose(0, 3, 4, 2, 1)

    def attention(self, k1: Tensor, q: Tensor) -> Tensor:
        logits = self.attention_logits(k1, q)
        if not self.config.softmax_attention:
            return logits
        return F.softmax_axis(logits, axis=3)

    def aggregate(self, v: Tensor, attn: Tensor) -> Tensor:
        if v.shape[1] != self.config.channels:
            raise ShapeError(f"values have {v.shape[1]} channels, expected {self.config.channels}")
        return local_aggregate(v, attn)

    def fusion_weights(self, k1: Tensor, k2: Tensor) -> Tensor:
        """Branch weights of shape (N, 2, C, 1, 1); they sum to 1 over axis 1."""
        if k1.shape != k2.shape:
            raise ShapeError(f"context shapes differ: {k1.shape} vs {k2.shape}")
        u = F.pool2d(k1 + k2, "global_avg")
        z = F.relu(self.fuse_norm(self.fuse_squeeze(u)))
        logits = F.concat_channels([self.fuse_excite1(z), self.fuse_excite2(z)])
        n, c = k1.shape[:2]
        return F.softmax_axis(logits.reshape(n, 2, c, 1, 1), axis=1)

    def fuse(self, k1: Tensor, k2: Tensor) -> Tensor:
        w = self.fusion_weights(k1, k2)
        return k1 * w[:, 0] + k2 * w[:, 1]

    def contexts(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return (K1, K2) for an already downsampled input."""
        k1 = self.static_context(x)
        k2 = self.aggregate(self.value(x), self.attention(k1, x))
        return k1, k2

    def forward(self, x: Tensor, mode: str | None = None) -> Tensor:
        cfg = self.config
        mode = cfg.mode if mode is None else mode
        if mode not in MODES:
            raise ConfigError(f"unknown CoT mode {mode!r}; expected one of {MODES}")
        if mode not in _RUNNABLE[cfg.mode]:
            raise ConfigError(f"block built for mode {cfg.mode!r} lacks the layers for {mode!r}")
        if x.ndim != 4 or x.shape[1] != cfg.channels:
            raise ShapeError(f"input {x.shape} does not have {cfg.channels} channels")
        if cfg.stride == 2:
            x = F.pool2d(x, "avg", 2, 2)
        if mode == "static_only":
            return self.static_context(x)
        k1, k2 = self.contexts(x)
        if mode == "dynamic_only":
            return k2
        if mode == "linear_fusion":
            return k1 + k2
        return self.fuse(k1, k2)


def cot_forward(x: Tensor, block: CotBlock) -> Tensor:
    return block(x)


def ablation_forward(x: Tensor, block: CotBlock, mode: str) -> Tensor:
    return block(x, mode=mode)
