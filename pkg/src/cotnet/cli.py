"""Command-line entry point: ``cotnet <command> [--flags]``.

Commands: profile, gradcheck, train, eval, ablate, export-spec.  Artifacts go
to ``--out`` (default: ``$COTNET_OUT`` or ``./cotnet-out``).  The exit code is
0 iff every requested check passes.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import checkpoint as ckpt_io
from .data import ImageFolderDataset, ToyDataset
from .gradcheck import run_suite
from .profiler import CONVENTION, budget_table, count_flops
from .tensor import ConfigError, ShapeError
from .zoo import ModelSpec, build_model, canonical_spec_text, dump_spec, resolve_spec, stage_replacement_variant
from .train import TrainConfig, ablate, evaluate, restore, train

OUT_ENV = "COTNET_OUT"
DEFAULT_MODELS = "resnet50,cotnet50,resnext50,cotnext50"


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "cotnet-out")


def _on_off(text: str) -> bool | None:
    if text not in ("on", "off", "spec"):
        raise argparse.ArgumentTypeError("expected 'on', 'off' or 'spec'")
    return None if text == "spec" else text == "on"


def _flags(text: str) -> tuple[bool, ...] | None:
    if text == "none":
        return None
    parts = [p.strip() for p in text.replace(",", " ").split()]
    if len(parts) != 4 or any(p not in ("0", "1") for p in parts):
        raise argparse.ArgumentTypeError("expected four 0/1 flags for res2..res5, e.g. 0,0,1,1")
    return tuple(p == "1" for p in parts)


def _ema(text: str) -> float | None:
    if text in ("off", "none"):
        return None
    value = float(text)
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError("EMA decay must lie in [0, 1]")
    return value


def _customise(spec: ModelSpec, args) -> ModelSpec:
    flags = getattr(args, "stage_flags", None)
    if flags is not None:
        spec = stage_replacement_variant(spec, flags)
    soft = getattr(args, "softmax_attn", None)
    if soft is not None and soft != spec.cot.softmax_attention:
        spec = dataclasses.replace(spec, name=f"{spec.name}-{'softmax' if soft else 'nosoftmax'}",
                                   cot=dataclasses.replace(spec.cot, softmax_attention=soft))
    return spec


def _dataset(args):
    if args.data:
        return ImageFolderDataset(args.data, seed=args.seed)
    return ToyDataset(samples=args.samples, seed=args.seed)


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_profile(args) -> int:
    specs = [_customise(resolve_spec(m.strip()), args) for m in args.models.split(",") if m.strip()]
    table = budget_table(specs, args.input)
    _write(os.path.join(args.out, "budget.csv"), table.to_csv())
    for spec in specs:
        report = count_flops(build_model(spec, seed=args.seed, dtype="float32"), args.input)
        _write(os.path.join(args.out, f"layers_{spec.name}.csv"), report.to_csv())
    print(table.to_text())
    return 0 if table.ok else 1


def cmd_gradcheck(args) -> int:
    if args.dtype != "f64":
        print("gradcheck: finite differences need --dtype f64", file=sys.stderr)
        return 2
    ops = [o.strip() for o in args.ops.split(",") if o.strip()]
    reports = run_suite(ops, seeds=range(args.seed, args.seed + args.seeds))
    lines = [r.line() for r in reports]
    failed = sum(not r.passed for r in reports)
    lines.append(f"{len(reports) - failed}/{len(reports)} checks passed")
    _write(os.path.join(args.out, "gradcheck.txt"), "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 1 if failed else 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch, base_lr=args.lr,
                       ema_decay=args.ema, seed=args.seed,
                       warmup_epochs=min(args.warmup, args.epochs - 1))


def cmd_train(args) -> int:
    spec = _customise(resolve_spec(args.model), args)
    result = train(spec, _dataset(args), _train_config(args), out_dir=args.out)
    final = result.final("train")
    print(result.metrics_csv(), end="")
    print(f"final train top1 {final['top1']:.4f}; artifacts in {args.out}")
    return 0


def cmd_eval(args) -> int:
    ck = ckpt_io.load(args.checkpoint)
    net = restore(ck, use_ema=args.ema is not None)
    loss, top1 = evaluate(net, _dataset(args), args.batch)
    print(f"loss {loss!r} top1 {top1!r}")
    return 0


def cmd_ablate(args) -> int:
    spec = _customise(resolve_spec(args.model), args)
    table = ablate(_dataset(args), _train_config(args), spec, out_dir=args.out)
    print(table.to_text())
    return 0


def cmd_export_spec(args) -> int:
    if args.stage_flags is None and args.softmax_attn is None:
        try:
            print(canonical_spec_text(args.model), end="")
            return 0
        except FileNotFoundError:
            pass
    print(dump_spec(_customise(resolve_spec(args.model), args)), end="")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="cotnet", description=__doc__.splitlines()[0],
                                     formatter_class=fmt, allow_abbrev=False,
                                     epilog=f"MAC convention: {CONVENTION}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt,
                           allow_abbrev=False)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0, help="random seed")
        p.add_argument("--out", default=_default_out(), help=f"output directory (env {OUT_ENV})")
        return p

    def variant_flags(p):
        p.add_argument("--stage-flags", type=_flags, default="none",
                       help="four 0/1 flags replacing res2..res5 with CoT stages, e.g. 0,0,1,1")
        p.add_argument("--softmax-attn", type=_on_off, default="spec", metavar="on|off|spec",
                       help="softmax over the k*k attention logits; 'spec' keeps the spec's setting")

    def training_flags(p, model):
        p.add_argument("--model", default=model, help="canonical model name or spec file")
        p.add_argument("--epochs", type=int, default=20, help="training epochs")
        p.add_argument("--batch", type=int, default=32, help="batch size")
        p.add_argument("--lr", type=float, default=0.1, help="base learning rate (peak = lr*batch/256)")
        p.add_argument("--warmup", type=float, default=5, help="linear warmup epochs")
        p.add_argument("--ema", type=_ema, default="off", help="EMA decay in [0, 1], or 'off'")
        data_flags(p)
        variant_flags(p)

    def data_flags(p):
        p.add_argument("--samples", type=int, default=512, help="synthetic dataset size")
        p.add_argument("--data", default="", help="class-per-folder PPM directory instead of synthetic data")

    p = add("profile", cmd_profile, "parameter / MAC budgets against the reference tables")
    p.add_argument("--models", default=DEFAULT_MODELS, help="comma-separated model names or spec files")
    p.add_argument("--input", type=int, default=224, help="input side length")
    variant_flags(p)

    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient suite")
    p.add_argument("--ops", default="all", help="comma-separated case names or 'all'")
    p.add_argument("--dtype", default="f64", choices=["f64"], help="check precision")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds per case")

    p = add("train", cmd_train, "train a model, write metrics.csv and checkpoint.ckpt")
    training_flags(p, "cotnet_tiny")

    p = add("eval", cmd_eval, "evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--batch", type=int, default=64, help="batch size")
    p.add_argument("--ema", type=_ema, default="off", help="any decay value: evaluate the stored EMA weights")
    data_flags(p)

    p = add("ablate", cmd_ablate, "train the four context variants and tabulate")
    training_flags(p, "cotnet_tiny")

    p = add("export-spec", cmd_export_spec, "print a model spec document")
    p.add_argument("model", help="canonical model name or spec file")
    variant_flags(p)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError, FileNotFoundError, KeyError, FloatingPointError) as exc:
        print(f"cotnet {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
