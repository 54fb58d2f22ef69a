"""Train the tiny CoTNet and the tiny ResNet on the synthetic texture set.

The synthetic classes differ in grating orientation (a local-context cue)
and colour palette (a channel-statistics cue).  Each run takes ~15 s.
"""
from cotnet.data import ToyDataset
from cotnet.profiler import count_flops
from cotnet.train import TrainConfig, train

train_set = ToyDataset(samples=512, seed=0)
val_set = ToyDataset(samples=256, seed=1)
config = TrainConfig(epochs=20, batch_size=32)
print(f"peak learning rate {config.peak_lr:.4f} after {config.warmup_epochs} warmup epochs")

for name in ("resnet_tiny", "cotnet_tiny"):
    result = train(name, train_set, config, val_dataset=val_set)
    cost = count_flops(result.net, 32)
    tr, va = result.final("train"), result.final("val")
    print(f"{name:<12} {cost.total_params:>8,d} params  train top1 {tr['top1']:.3f}  "
          f"val top1 {va['top1']:.3f}  val loss {va['loss']:.3f}")
