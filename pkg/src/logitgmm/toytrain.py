"""A small fully-connected classification head trained on the combined
loss, to produce logit spaces for the rest of the pipeline to consume.

Deliberately minimal: plain mini-batch gradient descent, fixed learning
rate, single-threaded and fully deterministic given the seed. Stands in
for a real detector's classification head at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .anchor import CentreSet, anchor_loss, class_centres, combined_loss
from .errors import ContractViolation, DataError
from .interchange import Detection, DetectionSet

UNIT_BOX = (0.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True)
class ToyHeadConfig:
    input_dim: int
    n_classes: int
    hidden_dims: tuple[int, ...] = (64,)
    lam: float = 0.1
    alpha: float = 10.0
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    cls_loss: str = "cross_entropy"

    def __post_init__(self):
        if self.lam < 0:
            raise ContractViolation("lambda must be >= 0")
        if self.learning_rate <= 0:
            raise ContractViolation("learning_rate must be > 0")
        if self.epochs < 1 or self.input_dim < 1 or self.n_classes < 2:
            raise ContractViolation("epochs >= 1, input_dim >= 1, n_classes >= 2 required")


class ToyHead:
    """ReLU MLP ending in a linear logit layer."""

    def __init__(self, config: ToyHeadConfig, rng: np.random.Generator):
        self.config = config
        self.centres: CentreSet = class_centres(config.n_classes, config.alpha)
        dims = [config.input_dim, *config.hidden_dims, config.n_classes]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray):
        """Returns (logits, per-layer activations for backprop)."""
        acts = [x]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward(np.asarray(x, dtype=np.float64))[0]

    def _step(self, x_batch, y_batch):
        """One gradient-descent step; returns (mean combined loss, mean
        anchor distance) over the batch."""
        cfg = self.config
        logits, acts = self.forward(x_batch)
        n = x_batch.shape[0]

        grad_logits = np.empty_like(logits)
        total_loss = 0.0
        total_anchor = 0.0
        for i in range(n):
            value, grad = combined_loss(logits[i], int(y_batch[i]), self.centres,
                                        cfg.lam, cfg.cls_loss)
            grad_logits[i] = grad
            total_loss += value
            total_anchor += anchor_loss(logits[i], int(y_batch[i]), self.centres)
        grad_logits /= n

        delta = grad_logits
        for layer in range(len(self.weights) - 1, -1, -1):
            grad_w = acts[layer].T @ delta
            grad_b = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (acts[layer] > 0.0)
            self.weights[layer] -= cfg.learning_rate * grad_w
            self.biases[layer] -= cfg.learning_rate * grad_b
        return total_loss / n, total_anchor / n


@dataclass
class TrainResult:
    head: ToyHead
    final_logits: np.ndarray  # logits of the training inputs after training
    epoch_mean_loss: list[float] = field(default_factory=list)
    epoch_mean_anchor: list[float] = field(default_factory=list)


def train_toy_head(features, labels, config: ToyHeadConfig) -> TrainResult:
    """Train the head on (features, labels); every class in [0, n_classes)
    must appear at least once."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ContractViolation(f"features {x.shape} vs labels {y.shape}")
    if x.shape[1] != config.input_dim:
        raise ContractViolation(f"expected input_dim {config.input_dim}, got {x.shape[1]}")
    if y.min(initial=0) < 0 or y.max(initial=0) >= config.n_classes:
        raise ContractViolation("labels outside [0, n_classes)")
    present = set(np.unique(y).tolist())
    missing = sorted(set(range(config.n_classes)) - present)
    if missing:
        raise DataError(f"training data has no samples for classes {missing}")

    rng = np.random.default_rng(config.seed)
    head = ToyHead(config, rng)

    n = x.shape[0]
    epoch_loss, epoch_anchor = [], []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        losses, anchors = [], []
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, anchor = head._step(x[batch], y[batch])
            losses.append(loss)
            anchors.append(anchor)
        epoch_loss.append(float(np.mean(losses)))
        epoch_anchor.append(float(np.mean(anchors)))

    return TrainResult(head=head, final_logits=head.logits(x),
                       epoch_mean_loss=epoch_loss, epoch_mean_anchor=epoch_anchor)


def synthetic_blobs(n_classes: int, input_dim: int, n_per_class: int,
                    centre_scale: float = 4.0, spread: float = 1.0, seed: int = 0):
    """Gaussian blob classes in feature space; returns (X, y)."""
    rng = np.random.default_rng(seed)
    centres = rng.normal(0.0, centre_scale, size=(n_classes, input_dim))
    xs, ys = [], []
    for c in range(n_classes):
        xs.append(centres[c] + spread * rng.standard_normal((n_per_class, input_dim)))
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def synthetic_openset_blobs(n_known: int, n_unknown: int, input_dim: int, n_per_class: int,
                            centre_scale: float = 2.0, spread: float = 2.0,
                            unknown_radius: tuple[float, float] = (1.75, 2.25),
                            seed: int = 0):
    """Blob classes for open-set experiments; returns (X, y) with labels
    [0, n_known) known and the rest unknown.

    Known centres are drawn isotropically; unknown centres sit outside the
    known hull, at unknown_radius times the known centres' RMS norm in
    random directions. Class-overlap noise comes from `spread`; the
    displaced unknowns model genuinely novel inputs, the regime where a
    classifier extrapolates with high confidence.
    """
    rng = np.random.default_rng(seed)
    known_centres = rng.normal(0.0, centre_scale, size=(n_known, input_dim))
    directions = rng.normal(size=(n_unknown, input_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    rms = centre_scale * np.sqrt(input_dim)
    radii = rng.uniform(*unknown_radius, size=(n_unknown, 1)) * rms
    centres = np.vstack([known_centres, directions * radii])
    xs, ys = [], []
    for c in range(n_known + n_unknown):
        xs.append(centres[c] + spread * rng.standard_normal((n_per_class, input_dim)))
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def detections_from_logits(logits, normalisation: str, class_names,
                           image_prefix: str = "toy") -> DetectionSet:
    """Wrap raw logit rows as interchange detections, one synthetic image
    and a unit box per row, so downstream tooling consumes them unchanged."""
    logits = np.asarray(logits, dtype=np.float64)
    detections = [
        Detection.from_logits(f"{image_prefix}-{i:06d}", UNIT_BOX, row, normalisation)
        for i, row in enumerate(logits)
    ]
    return DetectionSet(normalisation=normalisation, class_names=list(class_names),
                        detections=detections)
