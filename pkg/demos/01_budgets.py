"""Parameter and MAC budgets of the canonical backbones.

Everything here is symbolic shape propagation: no tensor is allocated beyond
the weights, so the full table takes a couple of seconds.
"""
from cotnet.profiler import budget_table, count_flops
from cotnet.zoo import build_model, get_spec, stage_replacement_variant

# %% The 50-layer comparison, against the reference figures.
print(budget_table(["resnet50", "cotnet50", "resnext50", "cotnext50"]).to_text())

# %% Deeper variants use the same unit; only the block counts change.
print()
print(budget_table(["resnet101", "cotnet101", "resnext101", "cotnext101"]).to_text())

# %% Replacing stages one at a time, from the deepest stage upwards.
base = get_spec("resnet50")
variants = [stage_replacement_variant(base, flags)
            for flags in [(0, 0, 0, 1), (0, 0, 1, 1), (0, 1, 1, 1), (1, 1, 1, 1)]]
print()
print(budget_table(variants).to_text())

# %% Where do the parameters of one CoT bottleneck go?
report = count_flops(build_model("cotnet50", dtype="float32"), 224)
print()
for row in report.rows:
    if row.path.startswith("res3.block2."):
        print(f"{row.path:<36} {row.params:>9,d} params {row.macs:>13,d} MACs")
