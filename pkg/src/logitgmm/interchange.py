"""Detection interchange format and its core record types.

Canonical JSON schema (consumed by scoring/evaluation, produced by the toy
trainer and external exporters):

    {"version": 1,
     "normalisation": "softmax" | "sigmoid",
     "classes": ["name", ...],
     "detections": [{"image_id": str, "bbox": [x1, y1, x2, y2],
                     "logits": [...], "scores": [...]}, ...],
     "meta": {...}}

Scored files carry an extra per-detection "uncertainty" object.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ContractViolation, DataError

SCORE_TOLERANCE = 1e-6


def normalise_scores(logits, mode: str) -> np.ndarray:
    """Map logits to confidence scores: softmax (max-subtracted, sums to 1)
    or elementwise sigmoid."""
    logits = np.asarray(logits, dtype=np.float64)
    if mode == "softmax":
        shifted = logits - logits.max()
        e = np.exp(shifted)
        return e / e.sum()
    if mode == "sigmoid":
        return expit(logits)
    raise ContractViolation(f"unknown normalisation mode {mode!r}")


def _check_box(bbox, where: str):
    x1, y1, x2, y2 = bbox
    if not (x1 < x2 and y1 < y2):
        raise ContractViolation(f"{where}: degenerate box {bbox}")


@dataclass(frozen=True)
class Detection:
    """One detector output: box, raw logits, normalised scores.

    predicted_class is the argmax of the scores (ties to the lowest index).
    """

    image_id: str
    bbox: tuple[float, float, float, float]
    logits: np.ndarray
    scores: np.ndarray
    predicted_class: int = field(init=False)

    def __post_init__(self):
        _check_box(self.bbox, f"detection on image {self.image_id!r}")
        logits = np.asarray(self.logits, dtype=np.float64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if logits.shape != scores.shape or logits.ndim != 1:
            raise ContractViolation(
                f"detection on image {self.image_id!r}: logits {logits.shape} vs scores {scores.shape}"
            )
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "predicted_class", int(np.argmax(scores)))

    @classmethod
    def from_logits(cls, image_id: str, bbox, logits, normalisation: str) -> "Detection":
        logits = np.asarray(logits, dtype=np.float64)
        return cls(image_id=image_id, bbox=tuple(bbox), logits=logits,
                   scores=normalise_scores(logits, normalisation))

    @property
    def max_score(self) -> float:
        return float(self.scores[self.predicted_class])


@dataclass(frozen=True)
class GroundTruthObject:
    """A labelled object; known_flag says whether its class is one the
    detector was trained on."""

    image_id: str
    bbox: tuple[float, float, float, float]
    class_id: int
    known_flag: bool

    def __post_init__(self):
        _check_box(self.bbox, f"ground truth on image {self.image_id!r}")
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))


@dataclass
class DetectionSet:
    """An interchange document in memory."""

    normalisation: str
    class_names: list[str]
    detections: list[Detection]
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.class_names)


def detection_set_to_dict(ds: DetectionSet, uncertainties: list[dict] | None = None) -> dict:
    records = []
    for i, det in enumerate(ds.detections):
        rec = {
            "image_id": det.image_id,
            "bbox": list(det.bbox),
            "logits": det.logits.tolist(),
            "scores": det.scores.tolist(),
        }
        if uncertainties is not None:
            rec["uncertainty"] = uncertainties[i]
        records.append(rec)
    return {
        "version": 1,
        "normalisation": ds.normalisation,
        "classes": list(ds.class_names),
        "detections": records,
        "meta": ds.meta,
    }


def save_detections(ds: DetectionSet, path, uncertainties: list[dict] | None = None):
    with open(path, "w") as fh:
        json.dump(detection_set_to_dict(ds, uncertainties), fh)


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise DataError(f"{where}: missing required key {key!r}")
    return doc[key]


def detection_set_from_dict(doc: dict, where: str = "detections",
                            check_scores: bool = True) -> DetectionSet:
    """Parse and validate an interchange document.

    Scores must reproduce from the logits under the declared normalisation
    within 1e-6 per lane; violations name the offending record.
    """
    version = _require(doc, "version", where)
    if version != 1:
        raise DataError(f"{where}: unsupported interchange version {version!r}")
    normalisation = _require(doc, "normalisation", where)
    if normalisation not in ("softmax", "sigmoid"):
        raise DataError(f"{where}: normalisation must be softmax or sigmoid, got {normalisation!r}")
    class_names = [str(c) for c in _require(doc, "classes", where)]
    dim = len(class_names)
    if dim == 0:
        raise DataError(f"{where}: empty class list")

    detections = []
    for i, rec in enumerate(_require(doc, "detections", where)):
        label = f"{where}: detection[{i}]"
        bbox = _require(rec, "bbox", label)
        logits = np.asarray(_require(rec, "logits", label), dtype=np.float64)
        scores = np.asarray(_require(rec, "scores", label), dtype=np.float64)
        if logits.shape != (dim,):
            raise DataError(f"{label}: expected {dim} logits, got {logits.shape}")
        if scores.shape != (dim,):
            raise DataError(f"{label}: expected {dim} scores, got {scores.shape}")
        if check_scores:
            expected = normalise_scores(logits, normalisation)
            err = float(np.max(np.abs(expected - scores)))
            if err > SCORE_TOLERANCE:
                raise DataError(
                    f"{label}: scores disagree with {normalisation}(logits) "
                    f"by {err:.3g} (> {SCORE_TOLERANCE:g})"
                )
        try:
            det = Detection(image_id=str(_require(rec, "image_id", label)),
                            bbox=tuple(bbox), logits=logits, scores=scores)
        except ContractViolation as exc:
            raise DataError(f"{label}: {exc}") from exc
        detections.append(det)

    return DetectionSet(normalisation=normalisation, class_names=class_names,
                        detections=detections, meta=doc.get("meta", {}))


def load_detections(path, check_scores: bool = True) -> DetectionSet:
    with open(path) as fh:
        doc = json.load(fh)
    return detection_set_from_dict(doc, where=str(path), check_scores=check_scores)


def load_scored_detections(path):
    """Load a scored interchange file; returns (DetectionSet, list of
    per-detection uncertainty dicts)."""
    with open(path) as fh:
        doc = json.load(fh)
    ds = detection_set_from_dict(doc, where=str(path))
    uncertainties = []
    for i, rec in enumerate(doc["detections"]):
        if "uncertainty" not in rec:
            raise DataError(f"{path}: detection[{i}] has no uncertainty block; run scoring first")
        uncertainties.append(rec["uncertainty"])
    return ds, uncertainties
