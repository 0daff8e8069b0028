"""Open-set evaluation: detection categorisation and uncertainty metrics.

Detections land in exactly one of three buckets. A correct detection (D_c)
localises a known-class object (IoU >= 0.5) and names its class; an
open-set error (D_OSE) localises an object of a class the detector never
trained on while predicting a known class; everything else, including
misclassifications, duplicates and background boxes, is a closed-set error
(D_CSE). Uncertainty methods are compared by how well their score orders
D_c above D_OSE: ROC with a strict > acceptance count, AUROC, and the TPR
achieved at fixed open-set error rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DataError
from .interchange import Detection, GroundTruthObject

CATEGORY_CORRECT = "D_c"
CATEGORY_CSE = "D_CSE"
CATEGORY_OSE = "D_OSE"

DEFAULT_OSR_LEVELS = (0.05, 0.10, 0.20)


def iou(box_a, box_b) -> float:
    """Intersection over union of two (x1, y1, x2, y2) boxes."""
    ax1, ay1, ax2, ay2 = box_a
    bx1, by1, bx2, by2 = box_b
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    if area_a <= 0 or area_b <= 0:
        raise ContractViolation(f"degenerate box: {box_a if area_a <= 0 else box_b}")
    ix = min(ax2, bx2) - max(ax1, bx1)
    iy = min(ay2, by2) - max(ay1, by1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (area_a + area_b - inter)


@dataclass
class CategorisedDetection:
    detection: Detection
    category: str
    matched_gt: GroundTruthObject | None = None
    uncertainty_scores: dict[str, float] = field(default_factory=dict)


def categorise(detections, gt_known, gt_unknown, iou_threshold: float = 0.5):
    """Assign every detection to D_c, D_CSE or D_OSE.

    Detections are processed in descending max-score order; each is matched
    to its highest-IoU eligible truth at IoU >= iou_threshold. A known
    truth is consumed once it yields a correct detection, so duplicates on
    the same object become closed-set errors. Unknown truths are never
    consumed: every detection that localises an unknown object is an
    open-set error.
    """
    gt_by_image: dict[str, list[tuple[GroundTruthObject, bool]]] = {}
    for gt in list(gt_known) + list(gt_unknown):
        gt_by_image.setdefault(gt.image_id, []).append([gt, False])

    order = sorted(range(len(detections)), key=lambda i: -detections[i].max_score)
    results: list[CategorisedDetection | None] = [None] * len(detections)
    for idx in order:
        det = detections[idx]
        best, best_iou = None, 0.0
        for entry in gt_by_image.get(det.image_id, ()):
            gt, consumed = entry
            if gt.known_flag and consumed:
                continue
            overlap = iou(det.bbox, gt.bbox)
            if overlap >= iou_threshold and overlap > best_iou:
                best, best_iou = entry, overlap
        if best is None:
            results[idx] = CategorisedDetection(det, CATEGORY_CSE)
        elif not best[0].known_flag:
            results[idx] = CategorisedDetection(det, CATEGORY_OSE, matched_gt=best[0])
        elif best[0].class_id == det.predicted_class:
            best[1] = True
            results[idx] = CategorisedDetection(det, CATEGORY_CORRECT, matched_gt=best[0])
        else:
            results[idx] = CategorisedDetection(det, CATEGORY_CSE, matched_gt=best[0])
    return results


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    osr: float
    tp_count: int
    ose_count: int


@dataclass
class RocCurve:
    """Acceptance trade-off swept over every distinct score plus +/-inf
    sentinels; points run from (OSR 0, TPR 0) to (1, 1) as the threshold
    falls."""

    points: list[RocPoint]
    n_correct: int
    n_ose: int


def rates_at_threshold(correct_scores, ose_scores, threshold: float):
    """(TPR, OSR) with the strict count: a score is accepted iff > threshold."""
    correct = np.asarray(correct_scores, dtype=np.float64)
    ose = np.asarray(ose_scores, dtype=np.float64)
    if correct.size == 0 or ose.size == 0:
        raise DataError("both correct and open-set score lists must be nonempty")
    return (
        float(np.count_nonzero(correct > threshold)) / correct.size,
        float(np.count_nonzero(ose > threshold)) / ose.size,
    )


def roc_curve(correct_scores, ose_scores) -> RocCurve:
    correct = np.sort(np.asarray(correct_scores, dtype=np.float64))
    ose = np.sort(np.asarray(ose_scores, dtype=np.float64))
    if correct.size == 0 or ose.size == 0:
        raise DataError("both correct and open-set score lists must be nonempty")

    values = np.unique(np.concatenate([correct, ose]))
    thresholds = np.concatenate([[np.inf], values[::-1], [-np.inf]])

    points = []
    for theta in thresholds:
        tp = int(correct.size - np.searchsorted(correct, theta, side="right"))
        oe = int(ose.size - np.searchsorted(ose, theta, side="right"))
        points.append(RocPoint(
            threshold=float(theta),
            tpr=tp / correct.size,
            osr=oe / ose.size,
            tp_count=tp,
            ose_count=oe,
        ))
    return RocCurve(points=points, n_correct=int(correct.size), n_ose=int(ose.size))


def auroc(curve: RocCurve) -> float:
    """Trapezoidal area under (OSR, TPR); equals the probability that a
    random correct detection outscores a random open-set error, ties
    counted half."""
    osr = np.array([p.osr for p in curve.points])
    tpr = np.array([p.tpr for p in curve.points])
    return float(np.trapezoid(tpr, osr))


def auroc_from_scores(correct_scores, ose_scores) -> float:
    return auroc(roc_curve(correct_scores, ose_scores))


@dataclass(frozen=True)
class OperatingPoint:
    level: float
    tpr: float
    osr: float
    tp_count: int
    ose_count: int


def tpr_at_osr(curve: RocCurve, osr_levels=DEFAULT_OSR_LEVELS) -> list[OperatingPoint]:
    """Best TPR attainable while keeping OSR at or below each level.

    Conservative: only curve points with OSR <= level are eligible; ties on
    TPR resolve to the lowest OSR.
    """
    out = []
    for level in osr_levels:
        if not (0.0 < level < 1.0):
            raise ContractViolation(f"osr level must be in (0, 1), got {level}")
        best = None
        for p in curve.points:
            if p.osr <= level and (best is None or p.tpr > best.tpr
                                   or (p.tpr == best.tpr and p.osr < best.osr)):
                best = p
        out.append(OperatingPoint(level=level, tpr=best.tpr, osr=best.osr,
                                  tp_count=best.tp_count, ose_count=best.ose_count))
    return out


def average_precision(ranked_is_tp, n_truths: int) -> float:
    """All-point interpolated AP from a ranked TP/FP sequence (fraction)."""
    if n_truths <= 0:
        raise ContractViolation("average_precision needs at least one ground-truth instance")
    flags = np.asarray(ranked_is_tp, dtype=bool)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / n_truths
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * envelope))


@dataclass
class MapResult:
    per_class_ap: dict[int, float]
    excluded_classes: list[int]
    map_percent: float


def map_at_iou(detections, gt_known, iou_threshold: float = 0.5) -> MapResult:
    """VOC-style mAP: per-class AP over detections ranked by max score with
    greedy one-to-one IoU matching, averaged over classes that have ground
    truth. Reported as a percentage (100 is perfect)."""
    truths_by_class: dict[int, list[GroundTruthObject]] = {}
    for gt in gt_known:
        truths_by_class.setdefault(gt.class_id, []).append(gt)

    dets_by_class: dict[int, list[Detection]] = {}
    for det in detections:
        dets_by_class.setdefault(det.predicted_class, []).append(det)

    excluded = sorted(c for c in dets_by_class if c not in truths_by_class)

    per_class_ap = {}
    for class_id, truths in sorted(truths_by_class.items()):
        class_dets = sorted(dets_by_class.get(class_id, []), key=lambda d: -d.max_score)
        matched = [False] * len(truths)
        by_image: dict[str, list[int]] = {}
        for t_idx, gt in enumerate(truths):
            by_image.setdefault(gt.image_id, []).append(t_idx)
        flags = []
        for det in class_dets:
            best_idx, best_iou = None, 0.0
            for t_idx in by_image.get(det.image_id, ()):
                if matched[t_idx]:
                    continue
                overlap = iou(det.bbox, truths[t_idx].bbox)
                if overlap >= iou_threshold and overlap > best_iou:
                    best_idx, best_iou = t_idx, overlap
            if best_idx is not None:
                matched[best_idx] = True
                flags.append(True)
            else:
                flags.append(False)
        per_class_ap[class_id] = average_precision(flags, len(truths))

    if not per_class_ap:
        raise DataError("no evaluated class has ground-truth instances")
    mean_ap = float(np.mean(list(per_class_ap.values())))
    return MapResult(per_class_ap=per_class_ap, excluded_classes=excluded,
                     map_percent=100.0 * mean_ap)


def baseline_uncertainties(det: Detection) -> dict[str, float]:
    """Single-pass baseline confidences, higher meaning keep.

    score: the max class score. entropy: negated Shannon entropy (nats) of
    the score distribution; sigmoid scores are normalised to sum to 1
    first (softmax scores already do).
    """
    p = det.scores / det.scores.sum()
    nz = p[p > 0]
    entropy = float(-np.sum(nz * np.log(nz)))
    return {"score": det.max_score, "entropy": -entropy}


@dataclass
class MethodReport:
    auroc: float
    operating_points: list[OperatingPoint]
    curve: RocCurve


@dataclass
class EvalReport:
    counts: dict[str, int]
    methods: dict[str, MethodReport]
    map_result: MapResult | None

    def to_dict(self) -> dict:
        doc = {
            "counts": self.counts,
            "methods": {
                name: {
                    "auroc": rep.auroc,
                    "tpr_at_osr": [
                        {"level": op.level, "tpr": op.tpr, "osr": op.osr,
                         "tp_count": op.tp_count, "ose_count": op.ose_count}
                        for op in rep.operating_points
                    ],
                }
                for name, rep in self.methods.items()
            },
        }
        if self.map_result is not None:
            doc["map"] = {
                "map_percent": self.map_result.map_percent,
                "per_class_ap": {str(k): v for k, v in self.map_result.per_class_ap.items()},
                "excluded_classes": self.map_result.excluded_classes,
            }
        return doc


def attach_method_scores(categorised, gmm_max_logliks=None):
    """Fill each CategorisedDetection's uncertainty_scores with the single
    pass baselines and, when given, the GMM max log-likelihood."""
    for i, cat in enumerate(categorised):
        cat.uncertainty_scores.update(baseline_uncertainties(cat.detection))
        if gmm_max_logliks is not None:
            cat.uncertainty_scores["gmm"] = float(gmm_max_logliks[i])
    return categorised


def evaluate(categorised, gt_known, methods=("gmm", "score", "entropy"),
             osr_levels=DEFAULT_OSR_LEVELS, with_map: bool = True) -> EvalReport:
    """Metrics over categorised detections whose uncertainty_scores carry
    each requested method."""
    counts = {
        CATEGORY_CORRECT: sum(c.category == CATEGORY_CORRECT for c in categorised),
        CATEGORY_CSE: sum(c.category == CATEGORY_CSE for c in categorised),
        CATEGORY_OSE: sum(c.category == CATEGORY_OSE for c in categorised),
    }
    counts["total"] = len(categorised)

    if counts[CATEGORY_CORRECT] == 0:
        raise DataError("no correct detections; ROC analysis is undefined")
    if counts[CATEGORY_OSE] == 0:
        raise DataError("no open-set errors; ROC analysis is undefined")

    method_reports = {}
    for method in methods:
        pos = [c.uncertainty_scores[method] for c in categorised if c.category == CATEGORY_CORRECT]
        neg = [c.uncertainty_scores[method] for c in categorised if c.category == CATEGORY_OSE]
        curve = roc_curve(pos, neg)
        method_reports[method] = MethodReport(
            auroc=auroc(curve),
            operating_points=tpr_at_osr(curve, osr_levels),
            curve=curve,
        )

    map_result = None
    if with_map:
        detections = [c.detection for c in categorised]
        map_result = map_at_iou(detections, gt_known)

    return EvalReport(counts=counts, methods=method_reports, map_result=map_result)


def _meta_comment_lines(meta: dict | None):
    if not meta:
        return []
    import json as _json

    return [f"# {k}: {_json.dumps(v, sort_keys=True)}" for k, v in sorted(meta.items())]


def write_report_csv(report: EvalReport, path, meta: dict | None = None):
    """One row per method and metric; meta rides along as # comments."""
    lines = _meta_comment_lines(meta)
    lines.append("method,metric,value")
    for name, rep in report.methods.items():
        lines.append(f"{name},auroc,{rep.auroc!r}")
        for op in rep.operating_points:
            pct = round(op.level * 100)
            lines.append(f"{name},tpr_at_{pct}pct_osr,{op.tpr!r}")
            lines.append(f"{name},tp_count_at_{pct}pct_osr,{op.tp_count}")
            lines.append(f"{name},ose_count_at_{pct}pct_osr,{op.ose_count}")
    if report.map_result is not None:
        lines.append(f"all,map_percent,{report.map_result.map_percent!r}")
    for cat, value in report.counts.items():
        lines.append(f"all,count_{cat},{value}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_roc_csv(curve: RocCurve, path, meta: dict | None = None):
    lines = _meta_comment_lines(meta)
    lines.append("threshold,tpr,osr,tp_count,ose_count")
    for p in curve.points:
        lines.append(f"{p.threshold!r},{p.tpr!r},{p.osr!r},{p.tp_count},{p.ose_count}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
