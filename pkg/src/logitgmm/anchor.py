"""Fixed class centres and the anchor distance term.

Class y's centre sits at +alpha in its own logit dimension and -alpha in
every other, so all centres are pairwise equidistant (2*alpha*sqrt(2)).
Pulling logits toward these centres during training gives each known class
a tight region that mixture models can fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractViolation

DEFAULT_ALPHA = 10.0
DEFAULT_LAMBDA = 0.1  # anchor weight that works at VOC scale


@dataclass(frozen=True)
class CentreSet:
    alpha: float
    centres: np.ndarray  # (n_classes, n_classes)

    @property
    def n_classes(self) -> int:
        return self.centres.shape[0]

    def centre(self, label: int) -> np.ndarray:
        if not 0 <= label < self.n_classes:
            raise ContractViolation(f"label {label} outside [0, {self.n_classes})")
        return self.centres[label]


def class_centres(n_classes: int, alpha: float = DEFAULT_ALPHA) -> CentreSet:
    """The fixed centre points, constant for the lifetime of training."""
    if n_classes < 2:
        raise ContractViolation("need at least 2 classes")
    if alpha <= 0:
        raise ContractViolation("alpha must be positive")
    centres = np.full((n_classes, n_classes), -alpha, dtype=np.float64)
    np.fill_diagonal(centres, alpha)
    return CentreSet(alpha=float(alpha), centres=centres)


def anchor_loss(logit, label: int, centres: CentreSet) -> float:
    """Euclidean distance from the logit vector to its class centre."""
    diff = np.asarray(logit, dtype=np.float64) - centres.centre(label)
    return float(np.linalg.norm(diff))


def anchor_loss_grad(logit, label: int, centres: CentreSet) -> np.ndarray:
    """Gradient of the anchor distance; the zero vector at the centre
    itself (subgradient choice at the norm's kink)."""
    diff = np.asarray(logit, dtype=np.float64) - centres.centre(label)
    norm = np.linalg.norm(diff)
    if norm == 0.0:
        return np.zeros_like(diff)
    return diff / norm


def cross_entropy(logit, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy and its gradient w.r.t. the logits."""
    logit = np.asarray(logit, dtype=np.float64)
    if not 0 <= label < logit.size:
        raise ContractViolation(f"label {label} outside [0, {logit.size})")
    shifted = logit - logit.max()
    log_z = np.log(np.sum(np.exp(shifted)))
    probs = np.exp(shifted - log_z)
    loss = float(log_z - shifted[label])
    grad = probs.copy()
    grad[label] -= 1.0
    return loss, grad


def focal_loss(logit, label: int, gamma: float = 2.0, balance: float = 0.25) -> tuple[float, np.ndarray]:
    """Sigmoid focal loss summed over lanes (one-hot target) and its
    gradient; the one-stage detector alternative to cross-entropy."""
    logit = np.asarray(logit, dtype=np.float64)
    if not 0 <= label < logit.size:
        raise ContractViolation(f"label {label} outside [0, {logit.size})")
    target = np.zeros(logit.size)
    target[label] = 1.0
    p = expit(logit)
    eps = 1e-12
    pos = -balance * (1.0 - p) ** gamma * np.log(np.maximum(p, eps))
    neg = -(1.0 - balance) * p**gamma * np.log(np.maximum(1.0 - p, eps))
    loss = float(np.sum(np.where(target == 1.0, pos, neg)))
    grad_pos = -balance * (1.0 - p) ** gamma * (1.0 - p - gamma * p * np.log(np.maximum(p, eps)))
    grad_neg = (1.0 - balance) * p**gamma * (p - gamma * (1.0 - p) * np.log(np.maximum(1.0 - p, eps)))
    grad = np.where(target == 1.0, grad_pos, grad_neg)
    return loss, grad


_CLS_LOSSES = {"cross_entropy": cross_entropy, "focal": focal_loss}


def combined_loss(logit, label: int, centres: CentreSet, lam: float,
                  cls_loss: str = "cross_entropy") -> tuple[float, np.ndarray]:
    """Classification loss plus lam times the anchor distance, with the
    summed gradient. lam = 0 reduces exactly to the classification loss."""
    if lam < 0:
        raise ContractViolation("lambda must be >= 0")
    cls_value, cls_grad = _CLS_LOSSES[cls_loss](logit, label)
    if lam == 0.0:
        return cls_value, cls_grad
    a_value = anchor_loss(logit, label, centres)
    a_grad = anchor_loss_grad(logit, label, centres)
    return cls_value + lam * a_value, cls_grad + lam * a_grad
