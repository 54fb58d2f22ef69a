"""Static context only, dynamic context only, their sum, and the learned fusion.

Trains four tiny variants with identical seeds and budgets.  At this scale the
synthetic task is easy for all of them; the interesting columns are the
parameter counts and the early-epoch losses.
"""
from cotnet.data import ToyDataset
from cotnet.train import TrainConfig, ablate

table = ablate(ToyDataset(samples=512, seed=0), TrainConfig(epochs=10, warmup_epochs=2))
print(table.to_text())
