"""Open-set error detection for object detectors.

Fits one full-covariance Gaussian mixture per known class to the
detector's logit space and scores detections by their maximum per-class
log-likelihood; low likelihood under every class model flags a detection
as a probable open-set error. Ships the anchor-loss training term that
structures the logit space, dataset conversion for open-set benchmarks,
and the evaluation harness (ROC / AUROC / TPR at fixed open-set error
rates, mAP).
"""

from ._kernels import backend_name, compiled_available
from .anchor import (
    CentreSet,
    anchor_loss,
    anchor_loss_grad,
    class_centres,
    combined_loss,
    cross_entropy,
)
from .dataset import (
    AnnotationSet,
    check_instance_ratio,
    filter_images,
    load_coco,
    load_voc_dir,
    split_classes,
    split_train_val,
)
from .errors import ContractViolation, DataError, FitError, NumericalError
from .evaluation import (
    auroc,
    auroc_from_scores,
    baseline_uncertainties,
    categorise,
    evaluate,
    iou,
    map_at_iou,
    roc_curve,
    tpr_at_osr,
)
from .extraction import (
    UncertaintyVector,
    build_training_logit_sets,
    flag_class_mismatch,
    normalise_scores,
    reject,
    select_theta_ose,
    uncertainty_vector,
    uncertainty_vectors,
)
from .gmm import ClassGMM, EmConfig, GaussianComponent, GMMSet, fit_all, fit_gmm, gmm_log_likelihood, select_components
from .interchange import Detection, DetectionSet, GroundTruthObject, load_detections, save_detections
from .toytrain import (
    ToyHeadConfig,
    detections_from_logits,
    synthetic_blobs,
    synthetic_openset_blobs,
    train_toy_head,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationSet",
    "CentreSet",
    "ClassGMM",
    "ContractViolation",
    "DataError",
    "Detection",
    "DetectionSet",
    "EmConfig",
    "FitError",
    "GMMSet",
    "GaussianComponent",
    "GroundTruthObject",
    "NumericalError",
    "ToyHeadConfig",
    "UncertaintyVector",
    "anchor_loss",
    "anchor_loss_grad",
    "auroc",
    "auroc_from_scores",
    "backend_name",
    "baseline_uncertainties",
    "build_training_logit_sets",
    "categorise",
    "check_instance_ratio",
    "class_centres",
    "combined_loss",
    "compiled_available",
    "cross_entropy",
    "detections_from_logits",
    "evaluate",
    "filter_images",
    "fit_all",
    "fit_gmm",
    "flag_class_mismatch",
    "gmm_log_likelihood",
    "iou",
    "load_coco",
    "load_detections",
    "load_voc_dir",
    "map_at_iou",
    "normalise_scores",
    "reject",
    "roc_curve",
    "save_detections",
    "select_components",
    "select_theta_ose",
    "split_classes",
    "split_train_val",
    "synthetic_blobs",
    "synthetic_openset_blobs",
    "tpr_at_osr",
    "train_toy_head",
    "uncertainty_vector",
    "uncertainty_vectors",
]
