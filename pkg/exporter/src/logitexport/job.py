"""Export job description and validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

# adapter name -> the score normalisation its head family implies
ADAPTER_FAMILIES = {
    "fasterrcnn_resnet50_fpn": "softmax",
    "fasterrcnn_mobilenet_v3_large_fpn": "softmax",
    "module": None,  # user module declares its own family
}


class JobError(ValueError):
    pass


@dataclass
class ExportJob:
    adapter: str
    class_names: list[str]
    normalisation: str
    detections_out: str
    images: list[str] = field(default_factory=list)
    annotations: str | None = None
    image_dir: str | None = None
    ground_truth_out: str | None = None
    weights: str | None = None
    module_path: str | None = None
    score_threshold: float = 0.05
    detections_per_image: int = 100
    min_size: int = 320
    warnings: list[str] = field(default_factory=list)

    def validate(self):
        if self.adapter not in ADAPTER_FAMILIES:
            raise JobError(f"unknown adapter {self.adapter!r}; "
                           f"choose one of {sorted(ADAPTER_FAMILIES)}")
        if self.normalisation not in ("softmax", "sigmoid"):
            raise JobError(f"normalisation must be softmax or sigmoid, "
                           f"got {self.normalisation!r}")
        if not self.class_names:
            raise JobError("class_names must be nonempty")
        if not self.images and not self.annotations:
            raise JobError("give either an image list or an annotation file")
        if self.adapter == "module" and not self.module_path:
            raise JobError("the module adapter needs module_path")
        family = ADAPTER_FAMILIES[self.adapter]
        if family is not None and family != self.normalisation:
            self.warnings.append(
                f"declared normalisation {self.normalisation!r} does not match the "
                f"{self.adapter} head family ({family}); the declared mode is used "
                "but scores will not mean what the detector was trained to output"
            )
        return self


def load_job(path) -> ExportJob:
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh) if path.suffix in (".yaml", ".yml") else json.load(fh)
    if not isinstance(doc, dict):
        raise JobError(f"{path}: job file must be a mapping")

    known = {
        "adapter", "class_names", "normalisation", "detections_out", "images",
        "annotations", "image_dir", "ground_truth_out", "weights", "module_path",
        "score_threshold", "detections_per_image", "min_size",
    }
    unknown = set(doc) - known
    if unknown:
        raise JobError(f"{path}: unknown job keys {sorted(unknown)}")
    missing = {"adapter", "class_names", "normalisation", "detections_out"} - set(doc)
    if missing:
        raise JobError(f"{path}: missing job keys {sorted(missing)}")
    return ExportJob(**doc).validate()
