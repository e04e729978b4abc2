"""Panoptic, semantic and instance symbol-spotting metrics over primitive-level
labelings: PQ/SQ/RQ, micro F1 and length-weighted F1, and COCO-style
AP50/AP75/mAP with greedy score-ordered matching.

Instance IoU is weighted by primitive arc length by default; count weighting
is available behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .annotator import PanopticLabel
from .screening import UNLABELED, ClassCatalog

IOU_MATCH_THRESHOLD = 0.5
AP_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
AP_RECALL_POINTS = 101


class MissingWeight(KeyError):
    pass


class MissingScore(ValueError):
    pass


class OverlapError(ValueError):
    pass


class CoverageError(ValueError):
    pass


@dataclass(frozen=True)
class SymbolInstance:
    class_id: int
    member_ids: frozenset[str]
    score: float | None = None

    def __post_init__(self):
        if not self.member_ids:
            raise ValueError("instance member set must be nonempty")


def _weight_of(weights: dict[str, float], sid: str) -> float:
    try:
        return weights[sid]
    except KeyError:
        raise MissingWeight(sid) from None


def instance_iou(a: SymbolInstance, b: SymbolInstance,
                 weights: dict[str, float]) -> float:
    """Weighted set IoU over member primitives."""
    inter = a.member_ids & b.member_ids
    union = a.member_ids | b.member_ids
    wu = sum(_weight_of(weights, sid) for sid in union)
    if wu == 0.0:
        return 0.0
    wi = sum(_weight_of(weights, sid) for sid in inter)
    return wi / wu


@dataclass(frozen=True)
class Matching:
    pred: tuple[SymbolInstance, ...]
    gt: tuple[SymbolInstance, ...]
    pairs: tuple[tuple[int, int, float], ...]  # (predIdx, gtIdx, iou)
    unmatched_pred: tuple[int, ...]
    unmatched_gt: tuple[int, ...]


def _check_disjoint(instances, side: str) -> None:
    seen: set[str] = set()
    for inst in instances:
        overlap = seen & inst.member_ids
        if overlap:
            raise OverlapError(
                f"{side} instances share primitives: {sorted(overlap)[:3]}")
        seen |= inst.member_ids


def match_instances(pred: list[SymbolInstance], gt: list[SymbolInstance],
                    weights: dict[str, float]) -> Matching:
    """All same-class pairs with IoU strictly above 0.5.

    Member-set disjointness within each side guarantees at most one partner
    per instance; that uniqueness is asserted.
    """
    _check_disjoint(pred, "predicted")
    _check_disjoint(gt, "ground-truth")
    pairs: list[tuple[int, int, float]] = []
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    for gi, g in enumerate(gt):
        for pi, p in enumerate(pred):
            if p.class_id != g.class_id:
                continue
            iou = instance_iou(p, g, weights)
            if iou > IOU_MATCH_THRESHOLD:
                assert pi not in used_pred and gi not in used_gt, \
                    "IoU > 0.5 matches must be unique"
                pairs.append((pi, gi, iou))
                used_pred.add(pi)
                used_gt.add(gi)
    return Matching(
        pred=tuple(pred), gt=tuple(gt), pairs=tuple(pairs),
        unmatched_pred=tuple(i for i in range(len(pred)) if i not in used_pred),
        unmatched_gt=tuple(i for i in range(len(gt)) if i not in used_gt),
    )


@dataclass(frozen=True)
class ClassPQ:
    tp: int
    fp: int
    fn: int
    iou_sum: float

    @property
    def mass(self) -> float:
        return self.tp + 0.5 * self.fp + 0.5 * self.fn

    @property
    def sq(self) -> float:
        if self.tp > 0:
            return self.iou_sum / self.tp
        return 1.0 if self.fp == 0 and self.fn == 0 else 0.0

    @property
    def rq(self) -> float:
        return self.tp / self.mass if self.mass > 0 else 1.0

    @property
    def pq(self) -> float:
        return self.sq * self.rq


@dataclass(frozen=True)
class PQAggregate:
    pq: float
    sq: float
    rq: float
    classes: int


def _aggregate(per_class: dict[int, ClassPQ], ids) -> PQAggregate:
    """Mass-weighted aggregate over the listed classes."""
    rows = [per_class[c] for c in ids if c in per_class]
    mass = sum(r.mass for r in rows)
    if mass == 0.0 or not rows:
        return PQAggregate(0.0, 0.0, 0.0, 0)
    return PQAggregate(
        pq=sum(r.pq * r.mass for r in rows) / mass,
        sq=sum(r.sq * r.mass for r in rows) / mass,
        rq=sum(r.rq * r.mass for r in rows) / mass,
        classes=len(rows),
    )


def _aggregate_mean(per_class: dict[int, ClassPQ], ids) -> PQAggregate:
    """Unweighted mean over the listed classes."""
    rows = [per_class[c] for c in ids if c in per_class]
    if not rows:
        return PQAggregate(0.0, 0.0, 0.0, 0)
    n = len(rows)
    return PQAggregate(sum(r.pq for r in rows) / n, sum(r.sq for r in rows) / n,
                       sum(r.rq for r in rows) / n, n)


@dataclass(frozen=True)
class PanopticReport:
    per_class: dict[int, ClassPQ]
    total: PQAggregate
    thing: PQAggregate
    stuff: PQAggregate
    total_mean: PQAggregate
    thing_mean: PQAggregate
    stuff_mean: PQAggregate


def panoptic_quality(matching: Matching, catalog: ClassCatalog) -> PanopticReport:
    """Per-class and aggregate PQ/SQ/RQ from a matching.

    Classes absent from both sides contribute nothing; headline aggregates
    are mass-weighted by TP + FP/2 + FN/2, unweighted means ride along.
    """
    tp: dict[int, int] = {}
    fp: dict[int, int] = {}
    fn: dict[int, int] = {}
    iou_sum: dict[int, float] = {}
    for pi, gi, iou in matching.pairs:
        c = matching.gt[gi].class_id
        tp[c] = tp.get(c, 0) + 1
        iou_sum[c] = iou_sum.get(c, 0.0) + iou
    for pi in matching.unmatched_pred:
        c = matching.pred[pi].class_id
        fp[c] = fp.get(c, 0) + 1
    for gi in matching.unmatched_gt:
        c = matching.gt[gi].class_id
        fn[c] = fn.get(c, 0) + 1
    present = sorted(set(tp) | set(fp) | set(fn))
    per_class = {c: ClassPQ(tp.get(c, 0), fp.get(c, 0), fn.get(c, 0),
                            iou_sum.get(c, 0.0)) for c in present}
    things = set(catalog.thing_ids())
    stuffs = set(catalog.stuff_ids())
    return PanopticReport(
        per_class=per_class,
        total=_aggregate(per_class, present),
        thing=_aggregate(per_class, [c for c in present if c in things]),
        stuff=_aggregate(per_class, [c for c in present if c in stuffs]),
        total_mean=_aggregate_mean(per_class, present),
        thing_mean=_aggregate_mean(per_class, [c for c in present if c in things]),
        stuff_mean=_aggregate_mean(per_class, [c for c in present if c in stuffs]),
    )


def semantic_scores(pred_labels: dict[str, PanopticLabel],
                    gt_labels: dict[str, PanopticLabel],
                    weights: dict[str, float]) -> tuple[float, float]:
    """(F1, wF1): micro precision/recall over primitives with labeled ground
    truth; wF1 weights every primitive by its length."""
    if set(pred_labels) != set(gt_labels):
        missing = set(gt_labels) ^ set(pred_labels)
        raise CoverageError(f"labelings cover different primitives: {sorted(missing)[:3]}")

    def scores(weight_fn) -> float:
        tp = pred_total = gt_total = 0.0
        for sid, gt_lab in gt_labels.items():
            if gt_lab.l == UNLABELED:
                continue
            w = weight_fn(sid)
            gt_total += w
            if pred_labels[sid].l != UNLABELED:
                pred_total += w
                if pred_labels[sid].l == gt_lab.l:
                    tp += w
        if gt_total == 0.0:
            return 1.0
        precision = tp / pred_total if pred_total > 0 else 0.0
        recall = tp / gt_total
        if precision + recall == 0.0:
            return 0.0
        return 2.0 * precision * recall / (precision + recall)

    f1 = scores(lambda sid: 1.0)
    wf1 = scores(lambda sid: _weight_of(weights, sid))
    return f1, wf1


@dataclass(frozen=True)
class APReport:
    ap50: float | None
    ap75: float | None
    map: float | None
    per_class: dict[int, dict[float, float]] = field(default_factory=dict)


def _average_precision(dets: list[tuple[float, int, float]], n_gt: int,
                       threshold: float) -> float:
    """101-point interpolated AP for one class at one IoU threshold.

    dets: (score, gt_index_or_-1, iou_with_that_gt) sorted by descending
    score; gt indices already reflect greedy assignment at this threshold.
    """
    tp_cum = 0
    fp_cum = 0
    points: list[tuple[float, float]] = []  # (recall, precision)
    for _, gt_idx, iou in dets:
        if gt_idx >= 0 and iou >= threshold:
            tp_cum += 1
        else:
            fp_cum += 1
        points.append((tp_cum / n_gt, tp_cum / (tp_cum + fp_cum)))
    ap = 0.0
    for i in range(AP_RECALL_POINTS):
        r = i / (AP_RECALL_POINTS - 1)
        best = 0.0
        for rec, prec in points:
            if rec >= r - 1e-12 and prec > best:
                best = prec
        ap += best
    return ap / AP_RECALL_POINTS


def instance_ap(pred: list[SymbolInstance], gt: list[SymbolInstance],
                weights: dict[str, float], catalog: ClassCatalog) -> APReport:
    """COCO-style AP over thing classes present in the ground truth.

    Greedy matching in descending score; each ground-truth instance is used
    at most once per threshold; a detection matches the highest-IoU unused
    ground truth at or above the threshold. mAP averages the ten thresholds
    0.50..0.95 and then the classes. All values are None when no thing class
    appears in the ground truth.
    """
    for inst in pred:
        if inst.score is None:
            raise MissingScore(f"prediction {sorted(inst.member_ids)[:1]} has no score")
    _check_disjoint(pred, "predicted")
    _check_disjoint(gt, "ground-truth")
    thing_ids = set(catalog.thing_ids())
    classes = sorted({g.class_id for g in gt} & thing_ids)
    if not classes:
        return APReport(None, None, None)

    per_class: dict[int, dict[float, float]] = {}
    for c in classes:
        gts = [g for g in gt if g.class_id == c]
        dets = sorted((p for p in pred if p.class_id == c),
                      key=lambda p: -p.score)
        iou_rows = [[instance_iou(p, g, weights) for g in gts] for p in dets]
        per_class[c] = {}
        for t in AP_IOU_THRESHOLDS:
            used: set[int] = set()
            assigned: list[tuple[float, int, float]] = []
            for di, det in enumerate(dets):
                best_gi = -1
                best_iou = 0.0
                for gi in range(len(gts)):
                    if gi in used:
                        continue
                    iou = iou_rows[di][gi]
                    if iou >= t and iou > best_iou:
                        best_iou = iou
                        best_gi = gi
                if best_gi >= 0:
                    used.add(best_gi)
                assigned.append((det.score, best_gi, best_iou))
            per_class[c][t] = _average_precision(assigned, len(gts), t)

    def mean_over_classes(t: float) -> float:
        return sum(per_class[c][t] for c in classes) / len(classes)

    ap50 = mean_over_classes(0.5)
    ap75 = mean_over_classes(0.75)
    mean_ap = sum(mean_over_classes(t) for t in AP_IOU_THRESHOLDS) / len(AP_IOU_THRESHOLDS)
    return APReport(ap50, ap75, mean_ap, per_class)
