import pytest

from oracles import brute_force_panoptic, oracle_iou
from plancad import metrics, screening
from plancad.annotator import PanopticLabel
from plancad.metrics import (CoverageError, Matching, MissingScore,
                             MissingWeight, OverlapError, SymbolInstance,
                             instance_ap, instance_iou, match_instances,
                             panoptic_quality, semantic_scores)

CATALOG = screening.ClassCatalog([("door", True), ("window", True),
                                  ("wall", False)])
DOOR, WINDOW, WALL = 1, 2, 3


def inst(cls, members, score=None):
    return SymbolInstance(cls, frozenset(members), score)


def test_iou_identical_and_disjoint():
    w = {"a": 1.0, "b": 2.0, "c": 3.0}
    assert instance_iou(inst(DOOR, {"a", "b"}), inst(DOOR, {"a", "b"}), w) == 1.0
    assert instance_iou(inst(DOOR, {"a"}), inst(DOOR, {"b"}), w) == 0.0


def test_iou_weighted_partial():
    # gt {e1: len 4, e2: len 1}, pred {e1}: intersection 4, union 5.
    w = {"e1": 4.0, "e2": 1.0}
    got = instance_iou(inst(DOOR, {"e1"}), inst(DOOR, {"e1", "e2"}), w)
    # Hand enumeration: sum over intersection = 4, over union = 5.
    assert got == pytest.approx(0.8, abs=1e-15)


def test_iou_missing_weight():
    with pytest.raises(MissingWeight):
        instance_iou(inst(DOOR, {"a"}), inst(DOOR, {"b"}), {"a": 1.0})


def test_match_identity():
    w = {"a": 1.0, "b": 1.0}
    gt = [inst(DOOR, {"a"}), inst(WINDOW, {"b"})]
    m = match_instances(gt, gt, w)
    assert len(m.pairs) == 2
    assert m.unmatched_pred == () and m.unmatched_gt == ()
    assert all(iou == 1.0 for _, _, iou in m.pairs)


def test_match_empty_pred():
    w = {"a": 1.0}
    m = match_instances([], [inst(DOOR, {"a"})], w)
    assert m.pairs == ()
    assert m.unmatched_gt == (0,)


def test_match_two_gt_one_pred():
    # Exhaustive pair enumeration: pred matches gt#0 at 0.8, gt#1 untouched.
    w = {"e1": 4.0, "e2": 1.0, "f1": 1.0}
    gt = [inst(DOOR, {"e1", "e2"}), inst(DOOR, {"f1"})]
    pred = [inst(DOOR, {"e1"})]
    m = match_instances(pred, gt, w)
    assert m.pairs == ((0, 0, 0.8),)
    assert m.unmatched_gt == (1,)
    assert m.unmatched_pred == ()


def test_match_class_must_agree():
    w = {"a": 1.0}
    m = match_instances([inst(WINDOW, {"a"})], [inst(DOOR, {"a"})], w)
    assert m.pairs == ()


def test_match_rejects_overlap():
    w = {"a": 1.0, "b": 1.0}
    with pytest.raises(OverlapError):
        match_instances([inst(DOOR, {"a", "b"}), inst(DOOR, {"a"})],
                        [inst(DOOR, {"b"})], w)


def test_iou_below_half_never_matches():
    w = {c: 1.0 for c in "abcd"}
    gt = [inst(DOOR, {"a", "b", "c", "d"})]
    pred = [inst(DOOR, {"a", "b"})]  # iou = 0.5 exactly: not strictly above
    m = match_instances(pred, gt, w)
    assert m.pairs == ()


def worked_fixture_single():
    w = {"e1": 4.0, "e2": 1.0}
    gt = [inst(DOOR, {"e1", "e2"})]
    pred = [inst(DOOR, {"e1"})]
    return pred, gt, w


def test_pq_worked_fixture_single_pair():
    pred, gt, w = worked_fixture_single()
    report = panoptic_quality(match_instances(pred, gt, w), CATALOG)
    row = report.per_class[DOOR]
    # Direct formula evaluation: TP=1 at iou 0.8 -> SQ=0.8, RQ=1, PQ=0.8.
    assert row.sq == pytest.approx(0.8, abs=1e-12)
    assert row.rq == pytest.approx(1.0, abs=1e-12)
    assert row.pq == pytest.approx(0.8, abs=1e-12)
    oracle = brute_force_panoptic([(DOOR, {"e1"})], [(DOOR, {"e1", "e2"})], w)
    assert row.pq == pytest.approx(oracle["per_class"][DOOR]["pq"], abs=1e-12)


def test_pq_worked_fixture_two_gt():
    w = {"e1": 4.0, "e2": 1.0, "f1": 1.0}
    gt = [inst(DOOR, {"e1", "e2"}), inst(DOOR, {"f1"})]
    pred = [inst(DOOR, {"e1"})]
    report = panoptic_quality(match_instances(pred, gt, w), CATALOG)
    row = report.per_class[DOOR]
    oracle = brute_force_panoptic([(DOOR, {"e1"})],
                                  [(DOOR, {"e1", "e2"}), (DOOR, {"f1"})], w)
    assert row.rq == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert row.pq == pytest.approx(0.5333, abs=1e-4)
    assert row.pq == pytest.approx(oracle["per_class"][DOOR]["pq"], abs=1e-12)


def test_pq_perfect_prediction():
    w = {c: float(i + 1) for i, c in enumerate("abcdef")}
    gt = [inst(DOOR, {"a", "b"}), inst(WINDOW, {"c"}), inst(WALL, {"d", "e", "f"})]
    report = panoptic_quality(match_instances(gt, gt, w), CATALOG)
    assert report.total.pq == 1.0 and report.total.sq == 1.0 and report.total.rq == 1.0
    assert report.thing.pq == 1.0 and report.stuff.pq == 1.0


def test_pq_identity_per_class():
    w = {c: 1.0 for c in "abcdefgh"}
    gt = [inst(DOOR, {"a", "b"}), inst(DOOR, {"c"}), inst(WINDOW, {"d", "e"}),
          inst(WALL, {"f", "g"})]
    pred = [inst(DOOR, {"a"}), inst(DOOR, {"h"}), inst(WINDOW, {"d", "e"}),
            inst(WALL, {"f"})]
    report = panoptic_quality(match_instances(pred, gt, w), CATALOG)
    for row in report.per_class.values():
        assert row.pq == pytest.approx(row.sq * row.rq, abs=1e-12)


def test_weight_scale_invariance():
    w = {"a": 2.0, "b": 3.0, "c": 5.0, "d": 1.0}
    gt = [inst(DOOR, {"a", "b"}), inst(WALL, {"c", "d"})]
    pred = [inst(DOOR, {"a"}), inst(WALL, {"c"})]
    r1 = panoptic_quality(match_instances(pred, gt, w), CATALOG)
    w2 = {k: v * 137.0 for k, v in w.items()}
    r2 = panoptic_quality(match_instances(pred, gt, w2), CATALOG)
    assert r1.total.pq == pytest.approx(r2.total.pq, abs=1e-12)
    f1a = semantic_scores({k: PanopticLabel(DOOR, 0) for k in w},
                          {k: PanopticLabel(DOOR, 0) for k in w}, w)
    f1b = semantic_scores({k: PanopticLabel(DOOR, 0) for k in w},
                          {k: PanopticLabel(DOOR, 0) for k in w}, w2)
    assert f1a == f1b


def test_semantic_all_correct():
    labels = {"a": PanopticLabel(DOOR, 0), "b": PanopticLabel(WALL, 0)}
    assert semantic_scores(labels, labels, {"a": 1.0, "b": 9.0}) == (1.0, 1.0)


def test_semantic_half_correct_equal_lengths():
    gt = {"a": PanopticLabel(DOOR, 0), "b": PanopticLabel(WALL, 0)}
    pred = {"a": PanopticLabel(DOOR, 0), "b": PanopticLabel(DOOR, 0)}
    f1, wf1 = semantic_scores(pred, gt, {"a": 1.0, "b": 1.0})
    # Direct count: P = R = 1/2.
    assert f1 == pytest.approx(0.5, abs=1e-15)
    assert wf1 == pytest.approx(0.5, abs=1e-15)


def test_semantic_heavy_primitive_unlabeled_prediction():
    # Ten primitives; the one carrying 90% of the length is predicted
    # unlabeled. Hand-computed: count F1 stays high; weighted P=1, R=0.1,
    # wF1 = 2*0.1/1.1 = 2/11.
    gt = {f"p{i}": PanopticLabel(DOOR, 0) for i in range(10)}
    pred = dict(gt)
    pred["p0"] = PanopticLabel(0, 0)
    weights = {f"p{i}": 1.0 for i in range(10)}
    weights["p0"] = 81.0  # 81 / (81 + 9) = 0.9 of total length
    f1, wf1 = semantic_scores(pred, gt, weights)
    assert f1 == pytest.approx(2 * 1.0 * 0.9 / 1.9, abs=1e-12)
    assert wf1 == pytest.approx(2.0 / 11.0, abs=1e-12)
    assert abs(wf1 - 0.18) < 0.005


def test_semantic_coverage_error():
    gt = {"a": PanopticLabel(DOOR, 0)}
    with pytest.raises(CoverageError):
        semantic_scores({"b": PanopticLabel(DOOR, 0)}, gt, {"a": 1.0, "b": 1.0})


def test_ap_perfect():
    w = {"a": 1.0, "b": 2.0}
    gt = [inst(DOOR, {"a"}), inst(WINDOW, {"b"})]
    pred = [inst(DOOR, {"a"}, 0.9), inst(WINDOW, {"b"}, 0.8)]
    rep = instance_ap(pred, gt, w, CATALOG)
    assert rep.ap50 == 1.0 and rep.ap75 == 1.0 and rep.map == 1.0


def test_ap_no_predictions():
    w = {"a": 1.0}
    rep = instance_ap([], [inst(DOOR, {"a"})], w, CATALOG)
    assert rep.ap50 == 0.0 and rep.ap75 == 0.0 and rep.map == 0.0


def test_ap_hand_walked_curve():
    # 1 gt; pred A (score .9, iou .6), pred B (score .8, iou 0).
    # At t=.5: A is TP (precision 1 at recall 1), B is FP -> AP = 1.
    # At t=.75: both FP -> AP = 0.
    w = {"e1": 3.0, "e2": 2.0, "x": 1.0}
    gt = [inst(DOOR, {"e1", "e2"})]
    pred = [inst(DOOR, {"e1"}, 0.9), inst(DOOR, {"x"}, 0.8)]
    assert oracle_iou({"e1"}, {"e1", "e2"}, w) == pytest.approx(0.6)
    rep = instance_ap(pred, gt, w, CATALOG)
    assert rep.ap50 == pytest.approx(1.0, abs=1e-12)
    assert rep.ap75 == pytest.approx(0.0, abs=1e-12)
    # AP=1 at thresholds .5, .55 and .6 (match rule is iou >= t), 0 above.
    assert rep.map == pytest.approx(0.3, abs=1e-12)


def test_ap_missing_score():
    w = {"a": 1.0}
    with pytest.raises(MissingScore):
        instance_ap([inst(DOOR, {"a"})], [inst(DOOR, {"a"})], w, CATALOG)


def test_ap_no_things_in_gt():
    w = {"a": 1.0}
    rep = instance_ap([], [inst(WALL, {"a"})], w, CATALOG)
    assert rep.ap50 is None and rep.map is None


def test_degradation_monotonicity_semantic():
    import random

    rng = random.Random(99)
    n = 200
    gt = {f"p{i}": PanopticLabel(DOOR, 0) for i in range(n)}
    weights = {f"p{i}": rng.uniform(0.5, 2.0) for i in range(n)}
    prev_f1 = 1.1
    for frac in (0.05, 0.10, 0.20):
        k = int(frac * n)
        pred = dict(gt)
        for sid in rng.sample(sorted(gt), k):
            pred[sid] = PanopticLabel(WINDOW, 0)
        f1, _ = semantic_scores(pred, gt, weights)
        assert f1 < prev_f1
        prev_f1 = f1


def _configs(n, max_inst, n_classes):
    """All full partitions of range(n) into <= max_inst classed instances."""
    def partitions(items):
        if not items:
            yield []
            return
        first, rest = items[0], items[1:]
        for part in partitions(rest):
            if len(part) < max_inst:
                yield part + [[first]]
            for i in range(len(part)):
                yield [cell + [first] if j == i else cell
                       for j, cell in enumerate(part)]

    from itertools import product
    for part in partitions(list(range(n))):
        cells = [frozenset(f"p{i}" for i in cell) for cell in part]
        for classes in product(range(1, n_classes + 1), repeat=len(cells)):
            yield tuple(zip(classes, cells))


def test_small_scale_oracle_equivalence():
    # n=3 primitives exhaustively here; the full n<=6 sweep runs in the
    # acceptance suite.
    n = 3
    weights = {f"p{i}": 1.0 for i in range(n)}
    configs = list(_configs(n, 3, 2))
    for gt_cfg in configs:
        gt = [inst(c, m) for c, m in gt_cfg]
        for pred_cfg in configs:
            pred = [inst(c, m) for c, m in pred_cfg]
            report = panoptic_quality(match_instances(pred, gt, weights), CATALOG)
            oracle = brute_force_panoptic(
                [(c, set(m)) for c, m in pred_cfg],
                [(c, set(m)) for c, m in gt_cfg], weights)
            for cls, row in report.per_class.items():
                want = oracle["per_class"][cls]
                assert row.pq == pytest.approx(want["pq"], abs=1e-12)
                assert row.sq == pytest.approx(want["sq"], abs=1e-12)
                assert row.rq == pytest.approx(want["rq"], abs=1e-12)
            assert report.total.pq == pytest.approx(oracle["total"]["pq"], abs=1e-12)
