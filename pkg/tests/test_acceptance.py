"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line.

The lines appear in the "acceptance criteria" section of the pytest summary
(and inline with ``-s``).
"""

import dataclasses
import math
import time
import warnings
from collections import Counter

import numpy as np
import pytest

from test_context_decoder import explicit_kernel, plain_fpn
from test_encoder import dense_attention
from test_metrics_folds_flops import ALL_3x3, exact_scores
from ugcanet import cli
from ugcanet.autodiff import REGISTRY, Tensor, no_grad, ops
from ugcanet.autodiff.optim import Adam
from ugcanet.context import compact_bilinear
from ugcanet.data import synth_dataset, synth_sample
from ugcanet.decoder import DecoderConfig, FaPNDecoder
from ugcanet.encoder import PRESETS, EfficientSelfAttention, FeaturePyramid
from ugcanet.folds import stratified_kfold
from ugcanet.gradcheck import run_suite
from ugcanet.heads import (
    BatchLabels,
    TaskOutputs,
    component_losses,
    loss_hp,
    loss_le,
    loss_pos,
    loss_seg,
    one_hot,
    total_loss,
    weighted_bce_iou_loss,
)
from ugcanet.metrics import dice_iou
from ugcanet.model import UGCANet, variant_name
from ugcanet.train import TrainConfig, evaluate, train

F64 = np.float64


def leaf(a):
    return Tensor(np.asarray(a, dtype=F64), requires_grad=True, dtype=F64)


def test_criterion_1_gradient_suite(criterion):
    with criterion(1, "gradient suite") as c:
        t0 = time.perf_counter()
        results = run_suite(seed=0, coords=100, log=None)
        elapsed = time.perf_counter() - t0
        names = {r.name for r in results}
        missing = set(REGISTRY) - names
        failed = [r.line() for r in results if not r.passed]
        c.note(f"{len(results)} checks, {elapsed:.0f}s")
        assert not missing, f"ops without a check: {sorted(missing)}"
        assert min(r.coords for r in results) >= 100
        assert not failed, failed[0]
        assert elapsed < 300


def test_criterion_2_degenerate_oracles(criterion):
    with criterion(2, "degenerate-case oracles") as c:
        r = np.random.default_rng(2)
        x = Tensor(r.standard_normal((2, 4, 8, 8)))
        w = Tensor(r.standard_normal((5, 4, 3, 3)))
        b = Tensor(r.standard_normal(5))
        deform = ops.deform_conv2d(x, w, Tensor(np.zeros((2, 18, 8, 8))), b, 1, 1).data
        d1 = float(np.abs(deform - ops.conv2d(x, w, b, 1, 1).data).max())

        att = EfficientSelfAttention(16, 2, 1).initialize(3)
        tok = r.standard_normal((2, 12, 16)).astype(np.float32)
        d2 = float(np.abs(att(Tensor(tok), 3, 4).data - dense_attention(att, tok.astype(F64))).max())

        chans = (8, 16, 16, 32)
        dec = FaPNDecoder(chans, DecoderConfig(width=8)).initialize(4)
        for fam in dec.fam:
            fam.offset.weight.data[...] = 0
            fam.offset.bias.data[...] = 0
        pyr = FeaturePyramid(*(Tensor(r.standard_normal((2, ch, 16 >> i, 16 >> i))) for i, ch in enumerate(chans)))
        d3 = float(np.abs(dec(pyr).data - plain_fpn(dec, pyr)).max())

        d4 = 0.0
        for order in (1, 2, 3):
            th, ph, g = (r.standard_normal((2, 3, 20)) * 0.5 for _ in range(3))
            got = compact_bilinear(*(Tensor(a, dtype=F64) for a in (th, ph, g)), order).data
            d4 = max(d4, float(np.abs(got - explicit_kernel(th, ph, g, order)).max()))
        c.note(f"deform {d1:.1e}, attention {d2:.1e}, fam {d3:.1e}, cgnl {d4:.1e}")
        assert d1 <= 1e-6 and d2 <= 1e-5 and d3 <= 1e-5 and d4 <= 1e-5


def test_criterion_3_loss_identities(criterion):
    with criterion(3, "loss identities") as c:
        v_pos = loss_pos(leaf(np.zeros((4, 10))), one_hot([0, 3, 7, 9], 10), np.ones(4), mean=True).item()
        v_hp = loss_hp(leaf([[0.0]]), [1], [1]).item()
        assert abs(v_pos - math.log(10)) <= 1e-6
        assert abs(v_hp - math.log(2)) <= 1e-6

        r = np.random.default_rng(3)
        worst = 0.0
        for which in ("pos", "le", "hp", "seg"):
            mu = np.array([1.0, 0.0, 1.0])
            if which == "seg":
                logits = leaf(r.standard_normal((3, 1, 8, 8)))
                loss_seg(logits, (r.uniform(size=(3, 1, 8, 8)) > 0.5).astype(F64), mu).backward()
            elif which == "hp":
                logits = leaf(r.standard_normal((3, 1)))
                loss_hp(logits, [1, -1, 0], mu).backward()
            else:
                k = 10 if which == "pos" else 6
                logits = leaf(r.standard_normal((3, k)))
                (loss_pos if which == "pos" else loss_le)(logits, one_hot([1, -1, 2], k), mu).backward()
            worst = max(worst, float(np.linalg.norm(logits.grad[1])))
        assert worst <= 1e-12

        n = 4
        mu = np.array([[1, 1, 1, 1], [1, 0, 0, 1], [0, 1, 1, 0], [0, 0, 1, 1]], dtype=F64)
        out = TaskOutputs(*(leaf(r.standard_normal(s)) for s in ((n, 1, 16, 16), (n, 10), (n, 6), (n, 1))))
        lab = BatchLabels(
            mu=mu,
            pos=np.where(mu[:, 0] == 1, r.integers(0, 10, n), -1),
            le=np.where(mu[:, 1] == 1, r.integers(0, 6, n), -1),
            hp=np.where(mu[:, 2] == 1, r.integers(0, 2, n), -1),
            masks=(r.uniform(size=(n, 1, 16, 16)) > 0.5).astype(F64) * mu[:, 3, None, None, None],
        )
        lam = (0.5, 2.0, 1.5, 0.25)
        comps = component_losses(out, lab)
        gap = abs(total_loss(out, lab, lam).item() - sum(l * comps[t].item() for l, t in zip(lam, ("pos", "le", "hp", "seg"))))
        c.note(f"ln10 err {abs(v_pos - math.log(10)):.1e}, masked grad {worst:.1e}, composition {gap:.1e}")
        assert gap <= 1e-6


def test_criterion_4_metric_oracle(criterion):
    with criterion(4, "metric oracle") as c:
        flat = ALL_3x3.reshape(512, 9).astype(int)
        mismatches = 0
        for i in range(512):
            p = ALL_3x3[i]
            for j in range(512):
                g = ALL_3x3[j]
                tp = int((flat[i] & flat[j]).sum())
                fp = int(flat[i].sum()) - tp
                fn = int(flat[j].sum()) - tp
                mismatches += tuple(dice_iou(p, g)) != exact_scores(tp, fp, fn)
        pred = np.zeros((3, 3), bool)
        pred[0] = True
        gt = np.zeros((3, 3), bool)
        gt[:, 0] = True
        s = dice_iou(pred, gt)
        c.note(f"{512 * 512} pairs, {mismatches} mismatches; hand case dice {s.dice:.4f} iou {s.iou:.4f}")
        assert mismatches == 0
        assert s.dice == 1 / 3 and s.iou == 1 / 5


def test_criterion_5_shape_law(criterion):
    with criterion(5, "shape law") as c:
        sizes = (32, 64, 96, 384, 480)
        model = UGCANet(seed=0)
        chans = PRESETS["tiny"].channels
        checked = 0
        with no_grad():
            for h in sizes:
                for w in sizes:
                    x = Tensor(np.zeros((1, 3, h, w), dtype=np.float32))
                    pyr = model.features(x)
                    for i, f in enumerate(pyr, start=1):
                        assert f.shape == (1, chans[i - 1], h // 2 ** (i + 1), w // 2 ** (i + 1)), (h, w, i, f.shape)
                    assert model(x).seg_logits.shape == (1, 1, h, w)
                    checked += 1
        c.note(f"{checked} (H, W) pairs")


# --- desk-scale learning -----------------------------------------------------------

MULTITASK = TrainConfig(
    size=32, batch=32, lr=1e-3, steps=500, schedule="cosine", warmup=50, augment=True, lambdas=(1.0, 2.0, 3.0, 1.0)
)
MULTITASK_N = 2048


@pytest.mark.slow
def test_criterion_6_desk_scale_learning(criterion):
    with criterion(6, "desk-scale learning") as c:
        t0 = time.perf_counter()
        # (a) segmentation on n=64 synthetic samples, scored on 64 unseen samples of the same stream
        seg_train = synth_dataset(64, 64, "seg", seed=1)
        seg_test = [synth_sample(1, i, 64, "seg") for i in range(64, 128)]
        model = train(seg_train, TrainConfig(size=64, lr=1e-4, steps=200, batch=8, seed=0)).model
        dice = evaluate(model, seg_test, 64).scores.dice
        c.note(f"held-out dice {dice:.3f}")

        # (b) single-sample overfit of the weighted BCE + IoU loss
        s = synth_sample(1, 0, 64)
        net = UGCANet(seed=0)
        opt = Adam(net.parameters(), lr=1e-3)
        x = Tensor(s.image[None])
        overfit_steps, loss = None, float("inf")
        for step in range(1, 301):
            out = net(x).seg_logits
            l = weighted_bce_iou_loss(out, s.mask[None])
            loss = l.item()
            if loss < 0.05:
                overfit_steps = step - 1
                break
            opt.zero_grad()
            l.backward()
            opt.step()
        c.note(f"overfit loss < 0.05 after {overfit_steps} steps" if overfit_steps is not None else f"overfit loss {loss:.3f}")

        # (c) multi-task accuracy on held-out samples, three seeds
        accs = []
        for seed in range(3):
            cfg = dataclasses.replace(MULTITASK, seed=seed)
            result = train(synth_dataset(MULTITASK_N, 32, "all", seed=seed), cfg)
            acc = evaluate(result.model, synth_dataset(200, 32, "all", seed=seed + 1000), 32).accuracy
            accs.append(acc)
        c.note("multitask acc " + " | ".join(f"{a['pos']:.2f}/{a['le']:.2f}/{a['hp']:.2f}" for a in accs))
        elapsed = time.perf_counter() - t0
        c.note(f"{elapsed / 60:.1f} min")

        assert dice >= 0.90
        assert overfit_steps is not None and overfit_steps <= 300
        assert all(min(a.values()) >= 0.9 for a in accs)
        assert elapsed <= 15 * 60


@pytest.mark.slow
def test_criterion_7_ablation(criterion, tmp_path, capsys):
    with criterion(7, "ablation grid") as c:
        assert cli.main(["ablate", "--out", str(tmp_path)]) == 0
        capsys.readouterr()
        rows = [line.split(",") for line in (tmp_path / "report.csv").read_text().splitlines()[1:]]
        dice = {r[1]: float(r[3]) for r in rows}
        expected = [variant_name(cg, se) for cg, se in ((False, False), (True, False), (False, True), (True, True))]
        c.note(", ".join(f"{k} {v:.3f}" for k, v in dice.items()))
        assert [r[1] for r in rows] == expected
        full = dice[variant_name(True, True)]
        assert full >= dice[variant_name(True, False)] - 0.02
        assert full >= dice[variant_name(False, True)] - 0.02


def test_criterion_8_pharynx_folds(criterion):
    with criterion(8, "stratified k-fold") as c:
        counts = {"WLI": 177, "FICE": 134, "BLI": 120, "LCI": 119}
        samples = [{"site": "pharynx", "lighting": m} for m, n in counts.items() for _ in range(n)]
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            plan = stratified_kfold(samples, 5, ("site", "lighting"), seed=0)
        per_fold = [Counter(samples[i]["lighting"] for i in f) for f in plan.folds()]
        c.note("WLI per fold " + ",".join(str(f["WLI"]) for f in per_fold))
        assert {f["WLI"] for f in per_fold} <= {35, 36}
        for mode, n in counts.items():
            assert {f[mode] for f in per_fold} <= {n // 5, -(-n // 5)}
            assert sum(f[mode] for f in per_fold) == n
        assert sorted(i for f in plan.folds() for i in f) == list(range(len(samples)))


@pytest.mark.slow
def test_criterion_9_determinism(criterion, tmp_path, capsys):
    with criterion(9, "determinism") as c:
        small = ["--size", "32", "--steps", "3", "--batch", "4"]

        def run_all(root):
            data, runs = root / "data", root / "train"
            commands = [
                ["synth", "--n", "12", "--size", "32", "--task-mix", "merged", "--out", str(data)],
                ["train", "--manifest", str(data / "train.csv"), "--out", str(runs), "--augment", "--multiscale", *small],
                ["eval", "--checkpoint", str(runs), "--manifest", str(data / "test.csv")],
                ["experiment", "--name", "kfold-5", "--n", "15", "--folds", "3", "--out", str(root / "kfold"), *small],
                ["experiment", "--name", "cross-dataset", "--n", "8", "--out", str(root / "cross"), *small],
                ["experiment", "--name", "multitask-gi", "--n", "15", "--folds", "3", "--out", str(root / "mt"), *small],
                ["experiment", "--name", "split-90-10", "--n", "10", "--out", str(root / "split"), *small],
                ["ablate", "--n", "10", "--out", str(root / "ablate"), *small],
            ]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                for argv in commands:
                    assert cli.main(argv) == 0, argv
            return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*.csv"))}

        a = run_all(tmp_path / "a")
        b = run_all(tmp_path / "b")
        capsys.readouterr()
        c.note(f"{len(a)} CSV files compared")
        assert a.keys() == b.keys() and len(a) >= 10
        differing = [str(k) for k in a if a[k] != b[k]]
        assert not differing, f"differ: {differing}"
