import numpy as np
import pytest

from logitgmm.errors import ContractViolation, DataError
from logitgmm.toytrain import (
    ToyHeadConfig,
    detections_from_logits,
    synthetic_blobs,
    synthetic_openset_blobs,
    train_toy_head,
)

SMALL = dict(input_dim=8, n_classes=4, hidden_dims=(16,), epochs=30, seed=3)


def small_data(seed=3, n_per_class=80):
    return synthetic_blobs(4, 8, n_per_class, centre_scale=2.0, spread=1.0, seed=seed)


def test_training_reduces_anchor_distance():
    # oracle is the epoch-0 mean anchor distance recorded by the same run
    x, y = synthetic_blobs(10, 32, 200, centre_scale=2.0, spread=1.0, seed=3)
    cfg = ToyHeadConfig(input_dim=32, n_classes=10, lam=0.1, epochs=100, seed=3)
    result = train_toy_head(x, y, cfg)
    assert result.epoch_mean_anchor[-1] < 0.25 * result.epoch_mean_anchor[0]


def test_anchor_term_tightens_clusters():
    x, y = small_data()
    with_anchor = train_toy_head(x, y, ToyHeadConfig(lam=0.1, **SMALL))
    without = train_toy_head(x, y, ToyHeadConfig(lam=0.0, **SMALL))
    assert with_anchor.epoch_mean_anchor[-1] < without.epoch_mean_anchor[-1]


def test_training_is_deterministic_bitwise():
    x, y = small_data()
    cfg = ToyHeadConfig(lam=0.1, **SMALL)
    a = train_toy_head(x, y, cfg)
    b = train_toy_head(x, y, cfg)
    assert np.array_equal(a.final_logits, b.final_logits)


def test_missing_class_is_named():
    x, y = small_data()
    keep = y != 2
    with pytest.raises(DataError, match=r"\[2\]"):
        train_toy_head(x[keep], y[keep], ToyHeadConfig(lam=0.1, **SMALL))


def test_label_out_of_range_rejected():
    x, y = small_data()
    y = y.copy()
    y[0] = 7
    with pytest.raises(ContractViolation):
        train_toy_head(x, y, ToyHeadConfig(lam=0.1, **SMALL))


def test_config_validation():
    with pytest.raises(ContractViolation):
        ToyHeadConfig(input_dim=4, n_classes=3, lam=-1.0)
    with pytest.raises(ContractViolation):
        ToyHeadConfig(input_dim=4, n_classes=3, learning_rate=0.0)


def test_focal_variant_trains():
    x, y = small_data()
    cfg = ToyHeadConfig(lam=0.1, cls_loss="focal", learning_rate=0.2, **SMALL)
    result = train_toy_head(x, y, cfg)
    assert result.epoch_mean_anchor[-1] < result.epoch_mean_anchor[0]


def test_openset_blobs_places_unknowns_outside_known_hull():
    x, y = synthetic_openset_blobs(6, 2, input_dim=12, n_per_class=50, seed=1)
    known_radius = np.linalg.norm(x[y < 6], axis=1).mean()
    unknown_radius = np.linalg.norm(x[y >= 6], axis=1).mean()
    assert unknown_radius > 1.3 * known_radius


def test_detections_from_logits_round_trip():
    logits = np.array([[5.0, -1.0, 0.0], [-2.0, 4.0, 1.0]])
    ds = detections_from_logits(logits, "softmax", ["a", "b", "c"], image_prefix="probe")
    assert [d.image_id for d in ds.detections] == ["probe-000000", "probe-000001"]
    assert [d.predicted_class for d in ds.detections] == [0, 1]
    assert all(d.bbox == (0.0, 0.0, 1.0, 1.0) for d in ds.detections)
    np.testing.assert_allclose(ds.detections[0].scores.sum(), 1.0, atol=1e-12)
