"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line
that is printed in the pytest terminal summary."""
import math
import time

import numpy as np

import oracles
from cotnet import Tensor, no_grad
from cotnet import checkpoint as ckpt_io
from cotnet import functional as F
from cotnet.attention import LocalSelfAttention, LsaConfig, local_aggregate, lsa_forward
from cotnet.cot import MODES, CotBlock, CotConfig
from cotnet.data import ToyDataset
from cotnet.gradcheck import COMPOSITE_TOL, PRIMITIVE_TOL, run_suite
from cotnet.profiler import budget_table
from cotnet.train import TrainConfig, ablate, restore, train
from cotnet.zoo import build_model

FIFTY = ("resnet50", "cotnet50", "resnext50", "cotnext50")


def test_1_budget_reproduction(acceptance):
    t0 = time.perf_counter()
    table = budget_table(FIFTY, 224)
    elapsed = time.perf_counter() - t0
    detail = "; ".join(f"{r.model} {r.params / 1e6:.2f}M ({100 * r.params_delta:+.2f}%) "
                       f"{r.macs / 1e9:.2f}G ({100 * r.macs_delta:+.2f}%)" for r in table.rows)
    ok = all(r.status == "pass" for r in table.rows) and elapsed < 60
    assert acceptance(1, "budget reproduction", ok, f"{detail}; {elapsed:.1f}s")


def test_2_ordering_claims(acceptance):
    t = budget_table(FIFTY, 224)
    r50, c50, x50, cx50 = (t.row(m) for m in FIFTY)
    mac_gap = cx50.macs / x50.macs - 1
    ok = c50.params < r50.params and cx50.params > x50.params and abs(mac_gap) <= 0.02
    detail = (f"CoTNet-50 {c50.params:,} < ResNet-50 {r50.params:,}; CoTNeXt-50 {cx50.params:,} > "
              f"ResNeXt-50 {x50.params:,}; MAC gap {100 * mac_gap:+.2f}%")
    assert acceptance(2, "ordering claims", ok, detail)


def test_3_shape_contract(acceptance):
    t0 = time.perf_counter()
    want = [112, 56, 28, 14, 7]
    bad = []
    x = Tensor(np.random.default_rng(0).normal(size=(1, 3, 224, 224)).astype(np.float32))
    for name in FIFTY:
        net = build_model(name, dtype="float32").eval()
        with no_grad():
            feats = net.forward_features(x)
        got = [feats[k].shape[2] for k in ("res1", "res2", "res3", "res4", "res5")]
        if got != want or [feats[k].shape[3] for k in ("res1", "res2", "res3", "res4", "res5")] != want:
            bad.append(f"{name}: {got}")
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 60
    assert acceptance(3, "shape contract", ok, f"{'all 4 specs 112/56/28/14/7' if not bad else bad}; "
                                               f"{elapsed:.1f}s")


def test_4_gradient_suite(acceptance):
    t0 = time.perf_counter()
    reports = run_suite(["all"], seeds=range(5))
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in reports if not r.passed]
    composite = [r for r in reports if r.tolerance == COMPOSITE_TOL]
    primitive = [r for r in reports if r.tolerance == PRIMITIVE_TOL]
    worst_c = max(r.max_rel_error for r in composite)
    worst_p = max(r.max_rel_error for r in primitive)
    ok = not failed and elapsed < 300 and all(r.name.startswith(("cot", "lsa")) for r in composite)
    detail = (f"{len(reports) - len(failed)}/{len(reports)} checks (5 seeds each); worst primitive "
              f"{worst_p:.1e} (<= 1e-5), worst composite {worst_c:.1e} (<= 1e-4); {elapsed:.0f}s")
    assert acceptance(4, "gradient suite", ok, detail + (f"; failed {failed}" if failed else ""))


def test_5_oracle_equivalence(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_lsa = worst_agg = 0.0
    for _ in range(100):
        heads = int(rng.choice([1, 2, 4]))
        c = heads * int(rng.integers(1, 8 // heads + 1))
        h, w = (int(v) for v in rng.integers(1, 7, size=2))
        k = int(rng.choice([1, 3, 5]))
        m = LocalSelfAttention(LsaConfig(c, k, heads), rng, dtype=np.float64)
        m.position.data = rng.normal(size=m.position.shape)
        x = rng.normal(size=(1, c, h, w))
        ref = oracles.lsa_forward(x, m.query_conv.weight.data, m.key_conv.weight.data,
                                  m.value_conv.weight.data, m.position.data, k, heads)
        worst_lsa = max(worst_lsa, float(np.abs(m(Tensor(x)).data - ref).max()))
        v, a = rng.normal(size=(2, c, h, w)), rng.normal(size=(2, h, w, k * k, heads))
        worst_agg = max(worst_agg, float(np.abs(local_aggregate(Tensor(v), Tensor(a)).data
                                                - oracles.local_aggregate(v, a)).max()))
    elapsed = time.perf_counter() - t0
    ok = worst_lsa <= 1e-10 and worst_agg <= 1e-10 and elapsed < 60
    assert acceptance(5, "oracle equivalence", ok, f"100 cases; max |diff| lsa {worst_lsa:.1e}, "
                                                   f"aggregate {worst_agg:.1e}; {elapsed:.1f}s")


def test_6_degenerate_reductions(acceptance):
    rng = np.random.default_rng(6)
    errs = {}
    # one-hot centre attention returns V exactly
    block = CotBlock(CotConfig(8, key_groups=2, share_channels=4, fusion_floor=4), rng, dtype=np.float64)
    v = rng.normal(size=(4, 8, 5, 5))
    a = np.zeros((4, 5, 5, 9, 2))
    a[..., block.config.center, :] = 1.0
    errs["one-hot centre"] = float(np.abs(block.aggregate(Tensor(v), Tensor(a)).data - v).max())
    cfg = LsaConfig(4, 3, 2)
    x = Tensor(rng.normal(size=(1, 4, 5, 5)))
    wq, wk, wv = (Tensor(rng.normal(size=(4, 4, 1, 1))) for _ in range(3))
    bias = np.zeros((1, 5, 5, 9, 2))
    bias[..., 4, :] = 1e4
    y = lsa_forward(x, wq, wk, wv, Tensor(np.zeros((3, 3, 2))), cfg, relation_bias=Tensor(bias)).data
    errs["lsa large centre logit"] = float(np.abs(y - F.conv2d(x, wv).data).max())
    # zero W_delta gives uniform attention
    block.delta_conv.weight.data[:] = 0.0
    block.delta_conv.bias.data[:] = 0.0
    xt = Tensor(rng.normal(size=(4, 8, 5, 5)))
    attn = block.attention(block.static_context(xt), xt).data
    errs["zero delta -> uniform"] = float(np.abs(attn - 1 / 9).max())
    # identical excitations give the exact branch average
    block.fuse_excite2.weight.data = block.fuse_excite1.weight.data.copy()
    block.fuse_excite2.bias.data = block.fuse_excite1.bias.data.copy()
    k1, k2 = Tensor(rng.normal(size=(4, 8, 5, 5))), Tensor(rng.normal(size=(4, 8, 5, 5)))
    errs["symmetric fusion"] = float(np.abs(block.fuse(k1, k2).data - (k1.data + k2.data) / 2).max())
    ok = all(e <= 1e-12 for e in errs.values())
    assert acceptance(6, "degenerate reductions", ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))


def test_7_toy_training(acceptance):
    data = ToyDataset(classes=8, samples=512, seed=0)
    cfg = TrainConfig()
    t0 = time.perf_counter()
    res = train("cotnet_tiny", data, cfg)
    elapsed = time.perf_counter() - t0
    top1 = res.final("train")["top1"]
    fit_ok = top1 >= 0.95 and elapsed < 300

    curves_ok, worst = True, -math.inf
    for seed in range(3):
        table = ablate(ToyDataset(samples=512, seed=seed), TrainConfig(seed=seed))
        for mode in MODES:
            rows = [m for m in table.results[mode].metrics if m["split"] == "train"]
            ratio = rows[9]["loss"] / rows[0]["loss"]
            worst = max(worst, ratio)
            curves_ok &= rows[9]["loss"] < rows[0]["loss"]
    detail = (f"cotnet_tiny train top1 {top1:.3f} after 20 epochs in {elapsed:.0f}s; "
              f"loss@10/loss@1 worst ratio {worst:.3f} over 4 variants x 3 seeds")
    assert acceptance(7, "toy training", fit_ok and curves_ok, detail)


def test_8_determinism(acceptance, tmp_path):
    data = ToyDataset(samples=128)
    cfg = TrainConfig(epochs=3, warmup_epochs=1, batch_size=32, ema_decay=0.99)
    a = train("cotnet_tiny", data, cfg, out_dir=str(tmp_path / "a"))
    train("cotnet_tiny", data, cfg, out_dir=str(tmp_path / "b"))
    same_ckpt = (tmp_path / "a" / "checkpoint.ckpt").read_bytes() == (tmp_path / "b" / "checkpoint.ckpt").read_bytes()
    same_log = (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    net = restore(ckpt_io.load(str(tmp_path / "a" / "checkpoint.ckpt")))
    x = Tensor(data.batch(range(16))[0])
    with no_grad():
        same_logits = np.array_equal(net.eval()(x).data, a.net.eval()(x).data)
    ok = same_ckpt and same_log and same_logits
    assert acceptance(8, "determinism", ok, f"checkpoints identical {same_ckpt}, metrics identical {same_log}, "
                                            f"round-trip logits bit-identical {same_logits}")
