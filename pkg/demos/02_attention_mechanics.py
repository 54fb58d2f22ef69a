"""Local self-attention versus the contextual (CoT) unit on a small map.

Shows the relation-map layout, the effect of the static context on the
attention weights, and the three degenerate settings that reduce the unit to
something simple.
"""
import numpy as np

from cotnet import Tensor
from cotnet.attention import LocalSelfAttention, LsaConfig
from cotnet.cot import CotBlock, CotConfig

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(4, 8, 6, 6)))

# %% Baseline: queries attend to a 3x3 window of keys, plus a position term.
lsa = LocalSelfAttention(LsaConfig(channels=8, kernel=3, heads=2), rng)
y, attn = lsa(x, return_attention=True)
print("relation map (N, H, W, k*k, heads):", attn.shape)
print("weights at the top-left corner, head 0:\n", attn.data[0, 0, 0, :, 0].reshape(3, 3).round(3))

# %% CoT: keys are first contextualised by a 3x3 group convolution (K1);
# attention is then predicted from [K1, X] by two 1x1 convolutions.
cot = CotBlock(CotConfig(channels=8, key_groups=2, share_channels=4, fusion_floor=4), rng)
k1 = cot.static_context(x)
a = cot.attention(k1, x)
print("CoT attention:", a.shape, "rows sum to", a.data.sum(axis=3).mean().round(12))
print("output:", cot(x).shape)

# %% Degenerate 1: one-hot attention at the centre offset copies the values.
v = cot.value(x)
one_hot = np.zeros(a.shape)
one_hot[..., cot.config.center, :] = 1.0
print("one-hot centre == V:", np.array_equal(cot.aggregate(v, Tensor(one_hot)).data, v.data))

# %% Degenerate 2: zero attention projection gives uniform weights.
cot.delta_conv.weight.data[:] = 0.0
cot.delta_conv.bias.data[:] = 0.0
print("uniform attention:", np.unique(cot.attention(k1, x).data))

# %% Degenerate 3: identical excitation branches fuse to the plain average.
cot.fuse_excite2.weight.data = cot.fuse_excite1.weight.data.copy()
cot.fuse_excite2.bias.data = cot.fuse_excite1.bias.data.copy()
k1, k2 = cot.contexts(x)
print("symmetric fusion == mean:", np.allclose(cot.fuse(k1, k2).data, (k1.data + k2.data) / 2, atol=1e-15))
