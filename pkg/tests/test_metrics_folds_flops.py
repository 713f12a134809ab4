import warnings
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ugcanet.encoder import Conv2d
from ugcanet.flops import attention_flop_ratio, count_model, flop_param_count
from ugcanet.folds import stratified_kfold
from ugcanet.metrics import ConfusionCounts, Scores, binarize, confusion, dice_iou, mean_scores, scores_from_counts
from ugcanet.model import ModelConfig, UGCANet

ALL_3x3 = ((np.arange(512)[:, None] >> np.arange(9)) & 1).astype(bool).reshape(512, 3, 3)


def brute_counts(p, g):
    tp = fp = fn = tn = 0
    for a, b in zip(p.reshape(-1), g.reshape(-1)):
        if a and b:
            tp += 1
        elif a:
            fp += 1
        elif b:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def exact_scores(tp, fp, fn):
    if tp + fp + fn == 0:
        return (1.0, 1.0, 1.0, 1.0)

    def r(a, b):
        return float(Fraction(a, b)) if b else 0.0

    return (r(2 * tp, 2 * tp + fp + fn), r(tp, tp + fp + fn), r(tp, tp + fn), r(tp, tp + fp))


def test_dice_iou_exhaustive_3x3():
    # per-pixel brute force gives the counts; every distinct count triple is checked
    # against exact rational scores, and every pair against its triple
    flat = ALL_3x3.reshape(512, 9)
    tp = flat.astype(int) @ flat.T.astype(int)
    npos = flat.sum(1)
    fp = npos[:, None] - tp
    fn = npos[None, :] - tp
    for i in range(0, 512, 37):
        for j in range(512):
            assert brute_counts(ALL_3x3[i], ALL_3x3[j])[:3] == (tp[i, j], fp[i, j], fn[i, j])
    table = {}
    for key in set(zip(tp.ravel().tolist(), fp.ravel().tolist(), fn.ravel().tolist())):
        table[key] = exact_scores(*key)
        got = scores_from_counts(ConfusionCounts(key[0], key[1], key[2], 9 - sum(key)))
        assert tuple(got) == table[key]
    for i in range(512):
        for j in range(512):
            got = dice_iou(ALL_3x3[i], ALL_3x3[j])
            assert tuple(got) == table[(tp[i, j], fp[i, j], fn[i, j])]


def test_hand_case():
    pred = np.zeros((3, 3), bool)
    pred[0] = True
    gt = np.zeros((3, 3), bool)
    gt[:, 0] = True
    c = confusion(pred, gt)
    assert (c.tp, c.fp, c.fn, c.tn) == (1, 2, 2, 4)
    s = dice_iou(pred, gt)
    assert s.dice == 2 / 6 and s.iou == 0.2


def test_trivial_cases():
    m = np.ones((4, 4), bool)
    assert dice_iou(m, m) == Scores(1.0, 1.0, 1.0, 1.0)
    a = np.zeros((2, 2), bool)
    a[0, 0] = True
    b = np.zeros((2, 2), bool)
    b[1, 1] = True
    assert dice_iou(a, b) == Scores(0.0, 0.0, 0.0, 0.0)
    z = np.zeros((3, 3), bool)
    assert dice_iou(z, z) == Scores(1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        dice_iou(np.zeros((2, 2)), np.zeros((3, 3)))


def test_iou_le_dice_with_equality_only_at_ends():
    for i in range(0, 512, 3):
        for j in range(0, 512, 5):
            s = dice_iou(ALL_3x3[i], ALL_3x3[j])
            assert s.iou <= s.dice <= 1.0
            assert (s.iou == s.dice) == (s.dice in (0.0, 1.0))


def test_binarize_threshold_is_half_probability():
    assert binarize(np.array([-1e-9, 0.0, 1e-9])).tolist() == [False, False, True]


def test_mean_scores_image_vs_global():
    a = np.zeros((2, 2), bool)
    a[0, 0] = True
    full = np.ones((2, 2), bool)
    per_image = mean_scores([a, full], [a, a])
    assert per_image.dice == pytest.approx((1.0 + 0.4) / 2)
    pooled = mean_scores([a, full], [a, a], aggregate="global")
    assert pooled.dice == pytest.approx(2 * 2 / (2 * 2 + 3))
    with pytest.raises(ValueError):
        mean_scores([a], [a], aggregate="bogus")


# -- folds -----------------------------------------------------------------------

PHARYNX = {"WLI": 177, "FICE": 134, "BLI": 120, "LCI": 119}


def pharynx_samples():
    return [{"site": "pharynx", "lighting": mode} for mode, n in PHARYNX.items() for _ in range(n)]


def test_pharynx_fold_balance():
    samples = pharynx_samples()
    plan = stratified_kfold(samples, 5, ("site", "lighting"), seed=0)
    per_fold = [Counter(samples[i]["lighting"] for i in f) for f in plan.folds()]
    assert sorted({c["WLI"] for c in per_fold}) == [35, 36]
    for mode, n in PHARYNX.items():
        counts = [c[mode] for c in per_fold]
        assert sum(counts) == n
        assert set(counts) <= {n // 5, n // 5 + 1}
    sizes = [len(f) for f in plan.folds()]
    assert max(sizes) - min(sizes) <= 1


def test_ten_samples_one_stratum():
    plan = stratified_kfold([{"s": 0}] * 10, 5, ("s",), seed=3)
    assert [len(f) for f in plan.folds()] == [2] * 5


def test_fold_plan_deterministic_and_seed_sensitive():
    s = pharynx_samples()
    a = stratified_kfold(s, 5, ("lighting",), seed=1).assignment
    assert a == stratified_kfold(s, 5, ("lighting",), seed=1).assignment
    assert a != stratified_kfold(s, 5, ("lighting",), seed=2).assignment


def test_small_stratum_warns_and_is_recorded():
    samples = [{"k": "big"}] * 10 + [{"k": "tiny"}] * 2
    with pytest.warns(UserWarning, match="tiny"):
        plan = stratified_kfold(samples, 5, ("k",))
    assert len(plan.warnings) == 1
    assert sorted(plan.assignment[10:]) != [] and len(set(plan.assignment[10:])) == 2


def test_split_partitions_and_mu():
    samples = [{"k": i % 3, "pos": 1, "le": None, "hp": 0, "mask": None} for i in range(20)]
    plan = stratified_kfold(samples, 4, ("k",))
    for f in range(4):
        tr, te = plan.split(f)
        assert sorted(tr + te) == list(range(20))
        assert not set(tr) & set(te)
    assert tuple(plan.mu[0]) == (1, 0, 1, 0)
    with pytest.raises(ValueError):
        stratified_kfold(samples, 1, ("k",))


@settings(max_examples=100, deadline=None)
@given(
    sizes=st.lists(st.integers(0, 40), min_size=1, max_size=6),
    k=st.integers(2, 7),
    seed=st.integers(0, 1000),
)
def test_fold_balance_property(sizes, k, seed):
    samples = [{"s": i} for i, n in enumerate(sizes) for _ in range(n)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        plan = stratified_kfold(samples, k, ("s",), seed=seed)
    folds = plan.folds()
    assert sorted(i for f in folds for i in f) == list(range(len(samples)))
    for stratum, n in enumerate(sizes):
        counts = [sum(samples[i]["s"] == stratum for i in f) for f in folds]
        assert max(counts) - min(counts) <= 1
    lens = [len(f) for f in folds]
    assert max(lens) - min(lens) <= 1


# -- flops -----------------------------------------------------------------------


def test_single_pointwise_conv_cost():
    assert flop_param_count(Conv2d(4, 8, 1, bias=False), 16, 16) == (32, 16384)


@pytest.mark.parametrize("sr", [1, 2, 4, 8])
def test_attention_reduction_ratio(sr):
    assert attention_flop_ratio(64, 16, 16, sr) == sr**2


def test_model_param_count_matches_module_tree():
    for preset in ("tiny", "b2-shape"):
        m = UGCANet(ModelConfig(preset=preset), seed=None)
        assert count_model(m, 64, 64).params == m.num_parameters()


def test_ablation_variants_cost_less():
    full = count_model(UGCANet(ModelConfig(), seed=None), 64, 64)
    base = count_model(UGCANet(ModelConfig(use_cgnl=False, use_se=False), seed=None), 64, 64)
    assert base.params < full.params and base.flops < full.flops
    assert full.by_prefix("context") > 0 == base.by_prefix("context")


def test_flops_scale_with_area():
    m = UGCANet(ModelConfig(use_cgnl=False, use_se=False), seed=None)
    small, big = count_model(m, 64, 64), count_model(m, 128, 128)
    # conv/linear terms scale 4x, attention core with m fixed-ratio scales 16x
    assert 4.0 <= big.flops / small.flops <= 16.0
