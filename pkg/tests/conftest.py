import numpy as np
import pytest

from logitgmm.interchange import Detection, GroundTruthObject


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_detection(image_id, bbox, logits, mode="softmax"):
    return Detection.from_logits(image_id, bbox, np.asarray(logits, dtype=float), mode)


def make_gt(image_id, bbox, class_id, known=True):
    return GroundTruthObject(image_id=image_id, bbox=tuple(bbox),
                             class_id=class_id, known_flag=known)


def random_spd(rng, d, scale=1.0):
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T) + d * np.eye(d)
