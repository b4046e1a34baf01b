"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Lines are also collected and repeated in the pytest terminal summary.
"""
import contextlib
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE, tiny_model
from crosscd import coordspace as cs
from crosscd import data as D
from crosscd import decoder as dec
from crosscd import synthesis as S
from crosscd.checkpoint import Checkpoint
from crosscd.config import TrainConfig
from crosscd.encoder import BitemporalInteraction, ProjectFuse, SiameseEncoder, build_backbone, merge_windows, \
    partition_windows
from crosscd.evaluate import evaluate_ratio, plot_curve, read_results_csv, sweep, write_results_csv
from crosscd.metrics import ConfusionCounts, confusion, f1_from, iou_from_f1, report
from crosscd.model import ModelConfig, build_model, compute_edges
from crosscd.synthesis import SynthesisConfig
from crosscd.train import loss_fn, model_from_checkpoint, train


@contextlib.contextmanager
def criterion(n, title):
    """Record PASS when the block completes, FAIL (with the reason) otherwise."""
    t = time.perf_counter()
    try:
        yield
    except BaseException as e:
        line = f"[FAIL] criterion {n}: {title} ({type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''})"
        ACCEPTANCE.append(line)
        print(line)
        raise
    line = f"[PASS] criterion {n}: {title} ({time.perf_counter() - t:.1f}s)"
    ACCEPTANCE.append(line)
    print(line)


# ---------------------------------------------------------------- 1

def test_criterion_1_coordinate_matching():
    with criterion(1, "match_index equals brute-force nearest center, H_hr <= 64"):
        t = time.perf_counter()
        queries = ties = 0
        for n_hr in range(1, 65):
            h = np.arange(n_hr)[:, None]
            for n_j in range(1, n_hr + 1):
                k = np.arange(n_j)[None, :]
                # |c_h - c_k| scaled by 2 * n_hr * n_j stays an exact integer
                dist = np.abs((2 * h + 1) * n_j - (2 * k + 1) * n_hr)
                best = dist.min(axis=1, keepdims=True)
                cands = dist == best
                got = cs.match_axis(n_hr, n_j, h[:, 0])
                tie = cands.sum(1) > 1
                expected = np.where(tie, n_j - 1 - np.argmax(cands[:, ::-1], axis=1), np.argmax(cands, axis=1))
                assert np.array_equal(got, expected), (n_hr, n_j)
                queries += n_hr
                ties += int(tie.sum())
                # 2D form agrees with the per-axis table
                idx = cs.match_index(cs.GridSpec(n_hr, n_hr), cs.GridSpec(n_j, n_j), cs.CellIndex(n_hr - 1, 0))
                assert idx == cs.CellIndex(int(expected[-1]), int(expected[0]))
        elapsed = time.perf_counter() - t
        print(f"  {queries} queries, {ties} ties resolved to the larger index, {elapsed:.2f}s")
        assert ties > 0
        assert elapsed < 10


# ---------------------------------------------------------------- 2

def test_criterion_2_metrics():
    with criterion(2, "F1/IoU reproduce the reported values; confusion matches per-pixel oracle"):
        f1 = f1_from(0.9055, 0.8630)
        assert abs(f1 - 0.8838) <= 2e-4, f1
        assert abs(iou_from_f1(f1) - 0.7918) <= 5e-4, iou_from_f1(f1)
        # the same precision/recall reached through counts
        c = ConfusionCounts(tp=8630, fp=round(8630 / 0.9055) - 8630, fn=10000 - 8630, tn=80000)
        assert abs(report(c).f1 - 0.8838) <= 2e-4
        rng = np.random.default_rng(0)
        for _ in range(100):
            density = rng.uniform(0.05, 0.95)
            pred = (rng.random((64, 64)) < density).astype(np.uint8)
            gt = (rng.random((64, 64)) < rng.uniform(0.05, 0.95)).astype(np.uint8)
            tally = [0, 0, 0, 0]
            for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
                tally[0 if p and g else 1 if p else 2 if g else 3] += 1
            assert confusion(pred, gt) == ConfusionCounts(*tally)


# ---------------------------------------------------------------- 3

_DECISIONS = """
import json, numpy as np
from crosscd import synthesis as S
img = np.random.default_rng(0).random((64, 64, 3)).astype(np.float32)
lr = S.resample(img, 16, 16)
out = []
for i in range(20):
    rec = S.SynthesisRecord()
    s = S.synthesize_training_pair(S.BitemporalSample(img, lr, np.zeros((64, 64), np.uint8), 4.0),
                                   S.SynthesisConfig(crop_size=32), S.make_rng(7, 3, i), rec)
    S.augment(s, S.make_rng(7, 3, i), record=rec)
    out.append([rec.r.hex(), rec.region.u, rec.region.v, rec.hflip, rec.vflip, rec.sigma.hex()])
print(json.dumps(out))
"""


def test_criterion_3_synthesis():
    with criterion(3, "r=1 identity; swap involution with exact sums; seeded decisions reproduce"):
        rng = np.random.default_rng(1)
        img = rng.random((64, 64, 3)).astype(np.float32)
        out, r = S.random_downsample_reconstruct(img, 1.0, S.make_rng(0))
        assert r == 1.0 and np.array_equal(out, img)
        a, b = rng.random((64, 64, 3)).astype(np.float32), rng.random((64, 64, 3)).astype(np.float32)
        for i in range(20):
            a2, b2, region = S.random_region_swap(a, b, int(rng.integers(1, 65)), S.make_rng(0, 0, i))
            a3, b3 = S.swap_region(a2, b2, region)
            assert np.array_equal(a3, a) and np.array_equal(b3, b)
            for c in range(3):
                # fsum is exact, so equal multisets give identical sums
                before = math.fsum(a[..., c].ravel().tolist()) + math.fsum(b[..., c].ravel().tolist())
                after = math.fsum(a2[..., c].ravel().tolist()) + math.fsum(b2[..., c].ravel().tolist())
                assert math.fsum([before, -after]) == 0.0
        runs = [subprocess.run([sys.executable, "-c", _DECISIONS], capture_output=True, text=True, check=True).stdout
                for _ in range(2)]
        assert runs[0] == runs[1]
        decisions = json.loads(runs[0])
        assert len({d[0] for d in decisions}) == 20  # r actually varies


# ---------------------------------------------------------------- 4

def test_criterion_4_encoder():
    with criterion(4, "partition/merge round trip, exact BLI locality, pyramid and fused widths"):
        torch.manual_seed(0)
        rng = np.random.default_rng(2)
        for _ in range(50):
            wh, ww = rng.integers(1, 9, 2)
            nh, nw = rng.integers(1, 6, 2)
            b, c = rng.integers(1, 3), rng.integers(1, 17)
            x = torch.randn(int(b), int(c), int(wh * nh), int(ww * nw))
            w = partition_windows(x, (int(wh), int(ww)))
            assert torch.equal(merge_windows(w, (int(wh), int(ww)), x.shape[2], x.shape[3]), x)

        bli = BitemporalInteraction(32, 8, n_layers=2).eval()
        f1, f2 = torch.randn(1, 32, 32, 32), torch.randn(1, 32, 32, 32)
        with torch.no_grad():
            base = bli(f1, f2)
            for (wy, wx) in ((0, 0), (2, 3), (3, 3)):
                g2 = f2.clone()
                g2[0, :, wy * 8 + 5, wx * 8 + 1] += 1.0
                out = bli(f1, g2)
                inside = torch.zeros(32, 32, dtype=torch.bool)
                inside[wy * 8:(wy + 1) * 8, wx * 8:(wx + 1) * 8] = True
                for o, ref in zip(out, base):
                    assert torch.equal(o[..., ~inside], ref[..., ~inside])
                    assert not torch.equal(o[..., inside], ref[..., inside])

        enc = SiameseEncoder(build_backbone("reference"), (1, 2, 3), window_size=8).eval()
        with torch.no_grad():
            p1, p2 = enc(torch.rand(1, 3, 256, 256), torch.rand(1, 3, 256, 256))
            fused = ProjectFuse(enc.widths)(p1, p2)
        assert [tuple(z.shape[1:]) for z in p1] == [(64, 64, 64), (128, 32, 32), (256, 16, 16), (512, 8, 8)]
        assert [tuple(z.shape[1:]) for z in fused] == [(128, 64, 64), (128, 32, 32), (128, 16, 16), (128, 8, 8)]


# ---------------------------------------------------------------- 5

def test_criterion_5_gradient_check():
    with criterion(5, "double-precision finite differences on 60 parameters, rel. error <= 1e-3"):
        t = time.perf_counter()
        torch.manual_seed(0)
        model = build_model(tiny_model()).double().train()
        pre = torch.rand(2, 3, 64, 64, dtype=torch.float64)
        post = torch.rand(2, 3, 64, 64, dtype=torch.float64)
        x0 = compute_edges(pre, post, model.cfg.canny)
        label = (torch.rand(2, 64, 64) > 0.7).long()

        def loss():
            return loss_fn(model.hr_logits(pre, post, x0), label)

        model.zero_grad()
        loss().backward()
        params = list(model.named_parameters())
        rng = np.random.default_rng(0)
        eps, worst, touched = 1e-6, 0.0, set()
        for _ in range(60):
            name, p = params[rng.integers(len(params))]
            i = int(rng.integers(p.numel()))
            touched.add(name.split(".")[0])
            analytic = p.grad.view(-1)[i].item()
            with torch.no_grad():
                old = p.view(-1)[i].item()
                p.view(-1)[i] = old + eps
                up = loss().item()
                p.view(-1)[i] = old - eps
                down = loss().item()
                p.view(-1)[i] = old
            numeric = (up - down) / (2 * eps)
            # gradients below ~1e-7 sit under the finite-difference roundoff (~1e-16 / eps)
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            worst = max(worst, err)
            assert err <= 1e-3, (name, i, analytic, numeric)
        elapsed = time.perf_counter() - t
        print(f"  worst relative error {worst:.2e} over modules {sorted(touched)}, {elapsed:.1f}s")
        assert elapsed < 120


# ---------------------------------------------------------------- 6

def test_criterion_6_normalization():
    with criterion(6, "score 2-vectors sum to 1 before and after upsampling"):
        torch.manual_seed(0)
        pre, post = torch.rand(2, 3, 64, 64), torch.rand(2, 3, 64, 64)
        for variant in ("sili", "base"):
            for mode in ("logits", "probs"):
                model = build_model(tiny_model(variant, score_upsampling=mode)).eval()
                with torch.no_grad():
                    low = dec.normalize(model(pre, post))
                    high = model.scores(pre, post)
                assert high.shape == (2, 2, 64, 64)
                for s in (low, high):
                    assert (s.sum(1) - 1).abs().max().item() <= 1e-6
                    assert s.min().item() >= 0


# ---------------------------------------------------------------- 7

FIXTURE_LR0 = 0.1
FIXTURE_ITERS = 200


def fixture_config(variant):
    """Pinned overfit settings: SILI with full synthesis, Base with none."""
    if variant == "sili":
        syn = SynthesisConfig(crop_size=32, random_reconstruct=True)
    else:
        syn = SynthesisConfig(crop_size=0, random_reconstruct=False)
    return TrainConfig(lr0=FIXTURE_LR0, epochs=FIXTURE_ITERS, batch_size=8, seed=0, train_ratio=4.0,
                       model=tiny_model(variant), synthesis=syn)


@pytest.mark.slow
def test_criterion_7_overfit_fixture():
    with criterion(7, "both variants reach train F1 >= 0.9; SILI ratio spread <= 0.15 and below Base's"):
        t = time.perf_counter()
        tiles = D.synthetic_dataset(8, 64, seed=0)
        train_set = [D.to_lr(s, 4.0) for s in tiles]
        spreads = {}
        for variant in ("sili", "base"):
            res = train(fixture_config(variant), train_set)
            model = model_from_checkpoint(res.best)
            f1 = res.best.manifest["best_val_f1"]
            per_ratio = [rep.f1 for _, rep, _ in sweep(model, tiles, D.SweepSpec([1, 2, 4]))]
            spreads[variant] = max(per_ratio) - min(per_ratio)
            print(f"  {variant}: train F1 {f1:.4f}, F1 at r=1/2/4 " + "/".join(f"{v:.4f}" for v in per_ratio)
                  + f", spread {spreads[variant]:.4f}")
            assert f1 >= 0.9, (variant, f1)
        elapsed = time.perf_counter() - t
        print(f"  {elapsed:.0f}s")
        assert spreads["sili"] <= 0.15
        assert spreads["base"] > spreads["sili"]
        assert elapsed < 600


# ---------------------------------------------------------------- 8

def test_criterion_8_sweep_plumbing(tmp_path):
    with criterion(8, "8-ratio sweep gives 8 rows and an 8-vertex curve; ratio 1 equals single eval"):
        tiles = D.synthetic_dataset(4, 64, seed=2)
        cfg = TrainConfig(lr0=0.05, epochs=1, batch_size=4, model=tiny_model(), synthesis=SynthesisConfig(crop_size=16))
        model = train(cfg, [D.to_lr(s, 4.0) for s in tiles]).model
        spec = D.SweepSpec(D.DEFAULT_RATIOS)
        rows = sweep(model, tiles, spec)
        write_results_csv(tmp_path / "sweep.csv", rows)
        assert len(read_results_csv(tmp_path / "sweep.csv")) == 8
        fig = plot_curve([tmp_path / "sweep.csv"], tmp_path / "sweep.png")
        lines = fig.axes[0].get_lines()
        assert len(lines) == 1 and len(lines[0].get_xdata()) == 8
        assert list(lines[0].get_xdata()) == list(spec.ratios)
        one_sweep = sweep(model, tiles, D.SweepSpec([1]))[0]
        rep, counts = evaluate_ratio(model, tiles, 1.0)
        assert counts == one_sweep[2] == rows[0][2]
        assert rep == one_sweep[1]


# ---------------------------------------------------------------- 9

def test_criterion_9_checkpoint(tmp_path):
    with criterion(9, "save/load/save byte-identical; resumed training equals uninterrupted"):
        tiles = D.synthetic_dataset(4, 64, seed=3)
        train_set = [D.to_lr(s, 4.0) for s in tiles]
        cfg = TrainConfig(lr0=0.05, epochs=3, batch_size=2, model=tiny_model(),
                          synthesis=SynthesisConfig(crop_size=16))
        full = train(cfg, train_set, out_dir=tmp_path / "full")
        full.last.save(tmp_path / "a.ckpt")
        Checkpoint.load(tmp_path / "a.ckpt").save(tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert Checkpoint.load(tmp_path / "b.ckpt").payload_bytes() == full.last.payload_bytes()

        train(cfg, train_set, out_dir=tmp_path / "part", stop_after_epoch=1)
        resumed = train(cfg, train_set, out_dir=tmp_path / "part",
                        resume=Checkpoint.load(tmp_path / "part" / "last.ckpt"))
        assert [e["losses"] for e in resumed.history] == [e["losses"] for e in full.history]
        assert resumed.last.payload_bytes() == full.last.payload_bytes()
        assert resumed.last.optim.keys() == full.last.optim.keys()
        assert all(np.array_equal(resumed.last.optim[k], full.last.optim[k]) for k in full.last.optim)
