"""Run an export job: detector over images, interchange JSON out.

Output files are schema-checked first and written atomically after the
whole run succeeds. Per-image failures (unreadable files) are collected
and reported without aborting the run.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .adapters import build_adapter
from .job import ExportJob, JobError


def normalise(logits: np.ndarray, mode: str) -> np.ndarray:
    if mode == "softmax":
        shifted = logits - logits.max()
        e = np.exp(shifted)
        return e / e.sum()
    out = np.empty_like(logits, dtype=np.float64)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    e = np.exp(logits[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class ExportResult:
    n_images: int
    n_detections: int
    item_errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _image_entries(job: ExportJob):
    """Yield (image_id, path) pairs plus the ground-truth document."""
    if job.annotations:
        with open(job.annotations) as fh:
            coco = json.load(fh)
        root = Path(job.image_dir or Path(job.annotations).parent)
        entries = [(str(img["id"]), root / img["file_name"]) for img in coco["images"]]
        gt = {"images": coco["images"], "annotations": coco["annotations"],
              "categories": coco["categories"]}
        return entries, gt
    entries = [(Path(p).stem, Path(p)) for p in job.images]
    gt = {
        "images": [{"id": image_id, "file_name": str(path)}
                   for image_id, path in entries],
        "annotations": [],
        "categories": [{"id": i, "name": n} for i, n in enumerate(job.class_names)],
    }
    return entries, gt


def validate_interchange(doc: dict):
    """Schema self-check before anything touches disk."""
    for key in ("version", "normalisation", "classes", "detections"):
        if key not in doc:
            raise JobError(f"interchange document missing {key!r}")
    dim = len(doc["classes"])
    for i, rec in enumerate(doc["detections"]):
        for key in ("image_id", "bbox", "logits", "scores"):
            if key not in rec:
                raise JobError(f"detection[{i}] missing {key!r}")
        if len(rec["logits"]) != dim or len(rec["scores"]) != dim:
            raise JobError(f"detection[{i}]: logits/scores length != {dim}")
        x1, y1, x2, y2 = rec["bbox"]
        if not (x1 < x2 and y1 < y2):
            raise JobError(f"detection[{i}]: degenerate box {rec['bbox']}")
        expected = normalise(np.asarray(rec["logits"]), doc["normalisation"])
        if np.max(np.abs(expected - np.asarray(rec["scores"]))) > 1e-6:
            raise JobError(f"detection[{i}]: scores do not match "
                           f"{doc['normalisation']}(logits)")


def _write_atomic(doc: dict, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, sort_keys=True)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_export(job: ExportJob) -> ExportResult:
    adapter = build_adapter(job)
    warnings = list(job.warnings)
    family = getattr(adapter, "family", None)
    if family is not None and family != job.normalisation:
        message = (f"adapter reports a {family} head but the job declares "
                   f"{job.normalisation}")
        if message not in " ".join(warnings):
            warnings.append(message)

    entries, gt_doc = _image_entries(job)
    records = []
    item_errors = []
    n_ok = 0
    for image_id, path in entries:
        try:
            with Image.open(path) as img:
                array = np.asarray(img.convert("RGB"))
        except OSError as exc:
            item_errors.append(f"{path}: {exc}")
            continue
        boxes, logits = adapter.detect(array)
        n_ok += 1
        for box, row in zip(boxes, logits):
            x1, y1, x2, y2 = (float(v) for v in box)
            if not (x1 < x2 and y1 < y2):
                continue  # NMS survivors clipped to a line carry no box signal
            scores = normalise(row, job.normalisation)
            records.append({
                "image_id": image_id,
                "bbox": [x1, y1, x2, y2],
                "logits": row.tolist(),
                "scores": scores.tolist(),
            })

    doc = {
        "version": 1,
        "normalisation": job.normalisation,
        "classes": list(job.class_names),
        "detections": records,
        "meta": {
            "tool": "logitexport 0.1.0",
            "adapter": job.adapter,
            "weights": job.weights,
            "images_processed": n_ok,
            "item_errors": item_errors,
            "warnings": warnings,
        },
    }
    validate_interchange(doc)
    _write_atomic(doc, job.detections_out)
    if job.ground_truth_out:
        _write_atomic(gt_doc, job.ground_truth_out)
    return ExportResult(n_images=n_ok, n_detections=len(records),
                        item_errors=item_errors, warnings=warnings)
