"""Harvesting training logits and scoring detections against the mixtures.

A detection's logit vector seeds the class-i training set only when it both
localises a class-i ground-truth box (IoU >= theta_iou) and assigns class i
a confident score (>= theta_conf). At test time every detection gets a
per-class log-likelihood vector; the max entry is its keep signal, compared
against theta_OSE with inclusive acceptance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DataError
from .evaluation import iou
from .gmm import GMMSet
from .interchange import Detection, GroundTruthObject, normalise_scores  # noqa: F401

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UncertaintyVector:
    """Per-class mixture log-likelihoods of one detection."""

    log_likelihoods: np.ndarray
    max_loglik: float = field(init=False)
    argmax_class: int = field(init=False)

    def __post_init__(self):
        lls = np.asarray(self.log_likelihoods, dtype=np.float64)
        object.__setattr__(self, "log_likelihoods", lls)
        object.__setattr__(self, "argmax_class", int(np.argmax(lls)))
        object.__setattr__(self, "max_loglik", float(lls[self.argmax_class]))


def _best_gt_match(det: Detection, ground_truth) -> tuple[GroundTruthObject | None, float]:
    """Highest-IoU ground truth for a detection, ties to annotation order."""
    best, best_iou = None, 0.0
    for gt in ground_truth:
        if gt.image_id != det.image_id:
            continue
        overlap = iou(det.bbox, gt.bbox)
        if overlap > best_iou:
            best, best_iou = gt, overlap
    return best, best_iou


def build_training_logit_sets(detections, ground_truth, theta_iou: float = 0.6,
                              theta_conf: float = 0.7) -> dict[int, np.ndarray]:
    """Per-class training logit sets gated by IoU and confidence.

    Each detection is assigned to at most one ground-truth object (its
    highest-IoU overlap); the logit joins that object's class set when the
    overlap reaches theta_iou and the detection's score for that class
    reaches theta_conf. Returns one (possibly empty) array per class id in
    [0, N); empty classes are logged, not dropped.
    """
    for name, value in (("theta_iou", theta_iou), ("theta_conf", theta_conf)):
        if not (0.0 < value <= 1.0):
            raise ContractViolation(f"{name} must be in (0, 1], got {value}")
    if not detections:
        raise DataError("no detections to harvest training logits from")
    ground_truth = [gt for gt in ground_truth if gt.known_flag]

    dim = detections[0].logits.size
    collected: dict[int, list[np.ndarray]] = {i: [] for i in range(dim)}
    for det in detections:
        gt, overlap = _best_gt_match(det, ground_truth)
        if gt is None or overlap < theta_iou:
            continue
        if not (0 <= gt.class_id < dim):
            raise DataError(f"ground-truth class {gt.class_id} outside logit dimension {dim}")
        if det.scores[gt.class_id] >= theta_conf:
            collected[gt.class_id].append(det.logits)

    empty = [i for i, rows in collected.items() if not rows]
    if empty:
        log.warning("no training logits collected for classes %s "
                    "(thresholds iou=%.3g conf=%.3g)", empty, theta_iou, theta_conf)
    return {
        i: (np.stack(rows) if rows else np.empty((0, dim)))
        for i, rows in collected.items()
    }


def uncertainty_vector(models: GMMSet, logit) -> UncertaintyVector:
    """Log-likelihood of one logit vector under every class model."""
    logit = np.asarray(logit, dtype=np.float64)
    if logit.shape != (models.dim,):
        raise ContractViolation(f"expected a {models.dim}-dim logit, got shape {logit.shape}")
    return UncertaintyVector(models.log_likelihood_matrix(logit[None, :])[0])


def uncertainty_vectors(models: GMMSet, logits) -> list[UncertaintyVector]:
    """Batch scoring; one kernel pass per class model."""
    matrix = models.log_likelihood_matrix(np.asarray(logits, dtype=np.float64))
    return [UncertaintyVector(row) for row in matrix]


def reject(scored_detections, theta_ose: float):
    """Partition (Detection, UncertaintyVector) pairs: accepted iff the max
    log-likelihood reaches theta_ose (inclusive)."""
    accepted, rejected = [], []
    for pair in scored_detections:
        (accepted if pair[1].max_loglik >= theta_ose else rejected).append(pair)
    return accepted, rejected


def flag_class_mismatch(det: Detection, u: UncertaintyVector) -> bool:
    """True when the score argmax and the likelihood argmax disagree; a
    diagnostic that correlates with erroneous detections."""
    return det.predicted_class != u.argmax_class


def select_theta_ose(negative_scores, target_rate: float) -> float:
    """Largest threshold whose accepted fraction of proxy negatives stays
    within the target error rate (acceptance is inclusive >=)."""
    if not (0.0 <= target_rate < 1.0):
        raise ContractViolation(f"target_rate must be in [0, 1), got {target_rate}")
    scores = np.sort(np.asarray(negative_scores, dtype=np.float64))[::-1]
    if scores.size == 0:
        raise DataError("no negative scores to derive a threshold from")
    k = math.floor(target_rate * scores.size)
    if k == 0:
        return float(np.nextafter(scores[0], np.inf))
    return float(scores[k - 1])


def split_correct_misclassified(detections, ground_truth, iou_threshold: float = 0.5):
    """Proxy validation sets for component selection.

    A detection is correct when its best ground-truth overlap (IoU >= 0.5)
    carries its predicted class, misclassified when the class differs;
    unlocalised detections are left out. Returns two lists of
    (logit, predicted_class) pairs.
    """
    correct, misclassified = [], []
    for det in detections:
        gt, overlap = _best_gt_match(det, ground_truth)
        if gt is None or overlap < iou_threshold:
            continue
        pair = (det.logits, det.predicted_class)
        if gt.class_id == det.predicted_class:
            correct.append(pair)
        else:
            misclassified.append(pair)
    return correct, misclassified
