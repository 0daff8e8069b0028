"""Detector adapters that surface raw per-detection logit vectors.

Detection pipelines normalise away the logits before returning results, so
each adapter re-runs the final selection stage with index tracking: every
surviving detection keeps a pointer to the classification-head row it came
from. Capture happens after NMS, one logit row per kept detection.
"""

from __future__ import annotations

import importlib.util
from collections import OrderedDict

import numpy as np
import torch
from torchvision.models import detection as tvdet
from torchvision.models.detection.transform import resize_boxes
from torchvision.ops import boxes as box_ops

FASTERRCNN_BUILDERS = {
    "fasterrcnn_resnet50_fpn": tvdet.fasterrcnn_resnet50_fpn,
    "fasterrcnn_mobilenet_v3_large_fpn": tvdet.fasterrcnn_mobilenet_v3_large_fpn,
}


class FasterRCNNAdapter:
    """Two-stage torchvision detector; logits come from the box predictor.

    The exported logit vector drops the background column, so downstream
    scores are softmax over the known classes only.
    """

    family = "softmax"

    def __init__(self, arch: str, num_classes: int, weights: str | None = None,
                 score_threshold: float = 0.05, detections_per_image: int = 100,
                 min_size: int = 320):
        builder = FASTERRCNN_BUILDERS[arch]
        # +1: torchvision reserves class 0 for background
        self.model = builder(
            weights=None,
            weights_backbone=None,
            num_classes=num_classes + 1,
            box_score_thresh=score_threshold,
            box_detections_per_img=detections_per_image,
            min_size=min_size,
        )
        if weights:
            state = torch.load(weights, map_location="cpu", weights_only=True)
            self.model.load_state_dict(state)
        self.model.eval()

    @torch.no_grad()
    def detect(self, image: np.ndarray):
        """image: (H, W, 3) uint8 or float in [0, 1]. Returns (boxes (n, 4)
        xyxy in input pixels, logits (n, num_classes))."""
        if image.dtype == np.uint8:
            image = image.astype(np.float32) / 255.0
        tensor = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1).float()

        model = self.model
        original_size = tensor.shape[-2:]
        image_list, _ = model.transform([tensor], None)
        features = model.backbone(image_list.tensors)
        if isinstance(features, torch.Tensor):
            features = OrderedDict([("0", features)])
        proposals, _ = model.rpn(image_list, features)
        box_features = model.roi_heads.box_roi_pool(
            features, proposals, image_list.image_sizes)
        box_features = model.roi_heads.box_head(box_features)
        class_logits, box_regression = model.roi_heads.box_predictor(box_features)

        boxes, rows = self._select(model.roi_heads, class_logits, box_regression,
                                   proposals[0], image_list.image_sizes[0])
        boxes = resize_boxes(boxes, image_list.image_sizes[0], original_size)
        logits = class_logits[rows, 1:]  # background column dropped
        return boxes.numpy().astype(np.float64), logits.numpy().astype(np.float64)

    @staticmethod
    def _select(roi_heads, class_logits, box_regression, proposals, image_shape):
        """Single-image mirror of the detector's detection selection
        (score gate, degenerate-box removal, per-class NMS, top-k) that
        also returns the surviving classification-head row indices."""
        num_classes = class_logits.shape[-1]
        pred_boxes = roi_heads.box_coder.decode(box_regression, [proposals])
        scores_all = torch.softmax(class_logits, -1)

        boxes = box_ops.clip_boxes_to_image(pred_boxes, image_shape)
        rows = torch.arange(class_logits.shape[0]).view(-1, 1).expand(-1, num_classes - 1)
        labels = torch.arange(num_classes).view(1, -1).expand_as(scores_all)[:, 1:]

        boxes = boxes[:, 1:].reshape(-1, 4)
        scores = scores_all[:, 1:].reshape(-1)
        labels = labels.reshape(-1)
        rows = rows.reshape(-1)

        inds = torch.where(scores > roi_heads.score_thresh)[0]
        boxes, scores, labels, rows = boxes[inds], scores[inds], labels[inds], rows[inds]

        keep = box_ops.remove_small_boxes(boxes, min_size=1e-2)
        boxes, scores, labels, rows = boxes[keep], scores[keep], labels[keep], rows[keep]

        keep = box_ops.batched_nms(boxes, scores, labels, roi_heads.nms_thresh)
        keep = keep[: roi_heads.detections_per_img]
        return boxes[keep], rows[keep]


class ModuleAdapter:
    """User-supplied detector: a Python file exposing build_detector()
    returning an object with .detect(image) -> (boxes, logits) and a
    .family attribute ('softmax' or 'sigmoid')."""

    def __init__(self, module_path: str, **_):
        spec = importlib.util.spec_from_file_location("logitexport_user_detector",
                                                      module_path)
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)
        self._detector = module.build_detector()
        self.family = getattr(self._detector, "family", None)

    def detect(self, image: np.ndarray):
        boxes, logits = self._detector.detect(image)
        return np.asarray(boxes, dtype=np.float64), np.asarray(logits, dtype=np.float64)


def build_adapter(job):
    if job.adapter == "module":
        return ModuleAdapter(job.module_path)
    return FasterRCNNAdapter(
        arch=job.adapter,
        num_classes=len(job.class_names),
        weights=job.weights,
        score_threshold=job.score_threshold,
        detections_per_image=job.detections_per_image,
        min_size=job.min_size,
    )
