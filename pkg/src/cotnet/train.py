"""Desk-scale training: SGD with momentum, label smoothing, linear warmup +
cosine decay, optional EMA of the weights, and the context-ablation harness.

Runs are deterministic for a fixed seed in a single-threaded process
(set ``OPENBLAS_NUM_THREADS=1`` if numpy links a threaded BLAS).
"""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt_io
from . import functional as F
from .checkpoint import Checkpoint
from .cot import MODES
from .profiler import count_flops
from .tensor import ConfigError, Tensor, no_grad
from .zoo import ModelSpec, Network, build_model, dump_spec, load_spec, resolve_spec

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "split", "loss", "top1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    base_lr: float = 0.1
    momentum: float = 0.9
    label_smoothing: float = 0.1
    warmup_epochs: float = 5
    ema_decay: float | None = None
    seed: int = 0
    weight_decay: float = 1e-4
    lr_reference_batch: int = 256
    dtype: str = "float32"

    @property
    def peak_lr(self) -> float:
        return self.base_lr * self.batch_size / self.lr_reference_batch

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"warmup_epochs must lie in [0, epochs), got {self.warmup_epochs}")
        if self.ema_decay is not None and not 0 <= self.ema_decay <= 1:
            raise ConfigError(f"ema_decay must lie in [0, 1], got {self.ema_decay}")


def lr_at(step: int, config: TrainConfig, steps_per_epoch: int) -> float:
    """Learning rate at optimizer ``step`` (fractional epochs).

    Rises linearly from 0 to ``peak_lr`` over the warmup epochs, then follows
    a half cosine down to 0 at the final step.
    """
    total = config.epochs * steps_per_epoch
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    epoch = step / steps_per_epoch
    peak, warm = config.peak_lr, config.warmup_epochs
    if epoch < warm:
        return peak * epoch / warm
    progress = (epoch - warm) / (config.epochs - warm)
    return 0.5 * peak * (1.0 + math.cos(math.pi * progress))


def smoothed_cross_entropy(logits: Tensor, labels, eps: float = 0.1) -> Tensor:
    """Mean cross-entropy against ``1 - eps`` on the true class and
    ``eps / (classes - 1)`` on every other class."""
    labels = np.asarray(labels, dtype=np.int64)
    n, classes = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise ValueError(f"labels must lie in [0, {classes})")
    off = eps / (classes - 1) if classes > 1 else 0.0
    target = np.full((n, classes), off, dtype=logits.dtype)
    target[np.arange(n), labels] = 1.0 - eps if classes > 1 else 1.0
    logp = F.log_softmax(logits, axis=1)
    return F.scale(F.sum(logp * Tensor(target)), -1.0 / n)


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: dict[str, np.ndarray],
             lr: float, momentum: float, weight_decay: float, decay_mask: dict[str, bool] | None = None):
    """In-place heavy-ball SGD: ``v = m*v + g + wd*p``; ``p -= lr*v``.

    ``decay_mask[name]`` False exempts a parameter from weight decay.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        wd = weight_decay if decay_mask is None or decay_mask.get(name, True) else 0.0
        d = g + wd * p if wd else g
        v = state.get(name)
        v = d.copy() if v is None else momentum * v + d
        state[name] = v.astype(p.dtype, copy=False)
        p -= p.dtype.type(lr) * state[name]
    return state


def ema_update(shadow: dict[str, np.ndarray], params: dict[str, np.ndarray], decay: float):
    """``shadow = decay * shadow + (1 - decay) * params`` in place."""
    for name, p in params.items():
        s = shadow[name]
        s *= decay
        s += (1.0 - decay) * p
    return shadow


@dataclass
class TrainResult:
    net: Network
    metrics: list[dict]
    checkpoint: Checkpoint

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.metrics)

    def final(self, split: str = "train") -> dict:
        return [m for m in self.metrics if m["split"] == split][-1]


def metrics_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([r["epoch"], r["split"], repr(float(r["loss"])), repr(float(r["top1"]))])
    return buf.getvalue()


def evaluate(net: Network, dataset, batch_size: int = 64, eps: float = 0.1,
             weights: dict[str, np.ndarray] | None = None) -> tuple[float, float]:
    """Eval-mode (loss, top-1 accuracy); ``weights`` temporarily replace the parameters."""
    saved = None
    if weights is not None:
        saved = {n: p.data for n, p in net.named_parameters()}
        for n, p in net.named_parameters():
            p.data = weights[n]
    net.eval()
    total, correct, count = 0.0, 0, 0
    try:
        with no_grad():
            for lo in range(0, len(dataset), batch_size):
                x, y = dataset.batch(range(lo, min(lo + batch_size, len(dataset))))
                logits = net(Tensor(x.astype(net.fc.weight.dtype)))
                total += smoothed_cross_entropy(logits, y, eps).item() * len(y)
                correct += int((logits.data.argmax(axis=1) == y).sum())
                count += len(y)
    finally:
        if saved is not None:
            for n, p in net.named_parameters():
                p.data = saved[n]
    return total / count, correct / count


def _decay_mask(net: Network) -> dict[str, bool]:
    # norm affine params and biases are 1-D; everything else is decayed
    return {n: p.ndim > 1 for n, p in net.named_parameters()}


def make_checkpoint(net: Network, velocity=None, shadow=None, rng=None, epoch: int = 0) -> Checkpoint:
    ck = Checkpoint(net.spec.name)
    for n, p in net.named_parameters():
        ck.entries[f"param.{n}"] = p.data.copy()
    for n, b in net.named_buffers():
        ck.entries[f"buffer.{n}"] = b.copy()
    for n, v in (velocity or {}).items():
        ck.entries[f"optim.{n}"] = v.copy()
    for n, s in (shadow or {}).items():
        ck.entries[f"ema.{n}"] = s.copy()
    if rng is not None:
        ck.put_json("meta.rng", rng.bit_generator.state)
    ck.put_json("meta.train", {"epoch": epoch})
    ck.put_text("meta.spec", dump_spec(net.spec))
    return ck


def restore(ck: Checkpoint, use_ema: bool = False) -> Network:
    """Rebuild the network described by a checkpoint and load its weights."""
    spec = load_spec(ck.text("meta.spec")) if "meta.spec" in ck.entries else resolve_spec(ck.spec_name)
    params = ck.group("param")
    dtype = next(iter(params.values())).dtype
    net = build_model(spec, seed=0, dtype=dtype)
    state = dict(params)
    if use_ema and ck.group("ema"):
        state.update(ck.group("ema"))
    state.update(ck.group("buffer"))
    net.load_state_dict(state)
    return net


def train(spec: ModelSpec | str, dataset, config: TrainConfig = TrainConfig(), val_dataset=None,
          out_dir: str | None = None) -> TrainResult:
    """Train ``spec`` on ``dataset``; log per-epoch metrics and return the final checkpoint.

    Metric rows: epoch 0 / split ``init`` is an eval-mode pass before any
    update; epochs 1..E / split ``train`` average the training batches;
    split ``val`` appears when ``val_dataset`` is given.
    """
    if isinstance(spec, str):
        spec = resolve_spec(spec)
    net = build_model(spec, seed=config.seed, dtype=config.dtype)
    rng = np.random.default_rng(config.seed)
    steps_per_epoch = len(dataset) // config.batch_size
    if steps_per_epoch < 1:
        raise ConfigError(f"dataset of {len(dataset)} samples is smaller than one batch")
    params = dict(net.named_parameters())
    arrays = lambda: {n: p.data for n, p in params.items()}  # noqa: E731
    mask = _decay_mask(net)
    velocity: dict[str, np.ndarray] = {}
    shadow = {n: p.data.copy() for n, p in params.items()} if config.ema_decay is not None else None
    eps = config.label_smoothing

    loss0, acc0 = evaluate(net, dataset, config.batch_size, eps)
    metrics = [{"epoch": 0, "split": "init", "loss": loss0, "top1": acc0}]
    step = 0
    for epoch in range(1, config.epochs + 1):
        if hasattr(dataset, "epoch"):
            dataset.epoch = epoch
        net.train()
        order = rng.permutation(len(dataset))
        total, correct, count = 0.0, 0, 0
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            x, y = dataset.batch(idx)
            net.zero_grad()
            logits = net(Tensor(x.astype(config.dtype)))
            loss = smoothed_cross_entropy(logits, y, eps)
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss {value} at epoch {epoch}, step {step} "
                                         f"(lr={lr_at(step, config, steps_per_epoch):.4g})")
            loss.backward()
            lr = lr_at(step, config, steps_per_epoch)
            sgd_step(arrays(), {n: p.grad for n, p in params.items()}, velocity, lr,
                     config.momentum, config.weight_decay, mask)
            if shadow is not None:
                ema_update(shadow, arrays(), config.ema_decay)
            step += 1
            total += value * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            count += len(y)
        metrics.append({"epoch": epoch, "split": "train", "loss": total / count, "top1": correct / count})
        log.info("epoch %d loss %.4f top1 %.3f", epoch, total / count, correct / count)
        if val_dataset is not None:
            vl, va = evaluate(net, val_dataset, config.batch_size, eps, weights=shadow)
            metrics.append({"epoch": epoch, "split": "val", "loss": vl, "top1": va})

    net.zero_grad()
    ck = make_checkpoint(net, velocity, shadow, rng, config.epochs)
    result = TrainResult(net, metrics, ck)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
            fh.write(result.metrics_csv())
        ckpt_io.save(ck, os.path.join(out_dir, "checkpoint.ckpt"))
    return result


# ---------------------------------------------------------------------------
# context ablation
# ---------------------------------------------------------------------------

# ImageNet top-1 of the CoTNet-50 context ablation, default training setup.
# Not reproducible at toy scale; printed for orientation only.
PAPER_ABLATION_TOP1 = {"static_only": 77.1, "dynamic_only": 78.5, "linear_fusion": 78.7, "full": 79.2}


@dataclass
class AblationRow:
    variant: str
    params: int
    macs: int
    loss_epoch1: float
    loss_final: float
    top1: float


@dataclass
class AblationTable:
    rows: list[AblationRow]
    results: dict[str, TrainResult]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "params", "macs", "loss_epoch1", "loss_final", "top1"])
        for r in self.rows:
            w.writerow([r.variant, r.params, r.macs, repr(r.loss_epoch1), repr(r.loss_final), repr(r.top1)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'variant':<14} {'params':>9} {'MACs':>11} {'loss@1':>8} {'loss@end':>9} {'top1':>6}"]
        for r in self.rows:
            lines.append(f"{r.variant:<14} {r.params:>9,d} {r.macs:>11,d} {r.loss_epoch1:>8.4f} "
                         f"{r.loss_final:>9.4f} {r.top1:>6.3f}")
        ref = ", ".join(f"{k} {v}" for k, v in PAPER_ABLATION_TOP1.items())
        lines.append(f"# reference ImageNet top-1 (%), CoTNet-50, not reproducible here: {ref}")
        return "\n".join(lines)


def ablate(dataset, config: TrainConfig = TrainConfig(), spec: ModelSpec | str = "cotnet_tiny",
           out_dir: str | None = None) -> AblationTable:
    """Train the four context variants under identical seeds and budgets."""
    base = resolve_spec(spec) if isinstance(spec, str) else spec
    rows, results = [], {}
    for mode in MODES:
        variant = dataclasses.replace(base, name=f"{base.name}-{mode}",
                                      cot=dataclasses.replace(base.cot, mode=mode))
        sub = None if out_dir is None else os.path.join(out_dir, mode)
        res = train(variant, dataset, config, out_dir=sub)
        report = count_flops(res.net, base.input_size)
        train_rows = [m for m in res.metrics if m["split"] == "train"]
        rows.append(AblationRow(mode, report.total_params, report.total_macs,
                                train_rows[0]["loss"], train_rows[-1]["loss"], train_rows[-1]["top1"]))
        results[mode] = res
    table = AblationTable(rows, results)
    if out_dir is not None:
        with open(os.path.join(out_dir, "ablation.csv"), "w", encoding="utf-8") as fh:
            fh.write(table.to_csv())
    return table
