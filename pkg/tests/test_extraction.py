import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_detection, make_gt
from logitgmm.errors import ContractViolation, DataError
from logitgmm.evaluation import iou
from logitgmm.extraction import (
    UncertaintyVector,
    build_training_logit_sets,
    flag_class_mismatch,
    reject,
    select_theta_ose,
    split_correct_misclassified,
    uncertainty_vector,
    uncertainty_vectors,
)
from logitgmm.gmm import ClassGMM, EmConfig, GaussianComponent, GMMSet, fit_all, gmm_log_likelihood


def far_apart_gmmset(n_classes=2, dim=2, gap=30.0):
    models = {}
    for c in range(n_classes):
        mean = np.zeros(dim)
        mean[c % dim] = gap * (c + 1)
        models[c] = ClassGMM(c, [GaussianComponent(mean, np.eye(dim), 1.0)])
    return GMMSet(models)


# --- build_training_logit_sets -------------------------------------------


def _softmax_logits_for(target, dim=4, strength=4.0):
    logits = np.zeros(dim)
    logits[target] = strength
    return logits


def test_detection_passing_both_thresholds_included():
    det = make_detection("img", (0, 0, 10, 10), _softmax_logits_for(3))
    gt = make_gt("img", (0, 0, 10, 13), class_id=3)  # IoU = 10/13 ~ 0.77
    assert det.scores[3] > 0.7
    sets = build_training_logit_sets([det], [gt], theta_iou=0.6, theta_conf=0.7)
    assert len(sets[3]) == 1
    np.testing.assert_array_equal(sets[3][0], det.logits)


def test_detection_failing_iou_excluded():
    det = make_detection("img", (0, 0, 10, 10), _softmax_logits_for(3))
    gt = make_gt("img", (0, 0, 10, 20), class_id=3)  # IoU = 0.5 < 0.6
    sets = build_training_logit_sets([det], [gt], theta_iou=0.6, theta_conf=0.7)
    assert all(len(v) == 0 for v in sets.values())


def test_detection_failing_confidence_excluded():
    det = make_detection("img", (0, 0, 10, 10), [0.2, 0.1, 0.0, -0.1])
    gt = make_gt("img", (0, 0, 10, 10), class_id=0)
    assert det.scores[0] < 0.7
    sets = build_training_logit_sets([det], [gt], theta_iou=0.6, theta_conf=0.7)
    assert len(sets[0]) == 0


def test_membership_matches_bruteforce_pair_oracle(rng):
    theta_iou, theta_conf = 0.6, 0.55
    dim = 5
    detections, truths = [], []
    for i in range(50):
        x, y = rng.uniform(0, 80, size=2)
        w, h = rng.uniform(5, 20, size=2)
        logits = rng.normal(scale=2.0, size=dim)
        detections.append(make_detection(f"img{i % 7}", (x, y, x + w, y + h), logits))
    for j in range(30):
        x, y = rng.uniform(0, 80, size=2)
        w, h = rng.uniform(5, 25, size=2)
        truths.append(make_gt(f"img{j % 7}", (x, y, x + w, y + h), int(rng.integers(dim))))

    sets = build_training_logit_sets(detections, truths, theta_iou, theta_conf)

    # oracle: exhaustive evaluation of the membership rule over all pairs,
    # with the single highest-IoU assignment per detection
    expected = {c: [] for c in range(dim)}
    for det in detections:
        best_gt, best_iou = None, 0.0
        for gt in truths:
            if gt.image_id != det.image_id:
                continue
            overlap = iou(det.bbox, gt.bbox)
            if overlap > best_iou:
                best_gt, best_iou = gt, overlap
        if best_gt is not None and best_iou >= theta_iou \
                and det.scores[best_gt.class_id] >= theta_conf:
            expected[best_gt.class_id].append(det.logits)

    for c in range(dim):
        assert len(sets[c]) == len(expected[c])
        for got, want in zip(sets[c], expected[c]):
            np.testing.assert_array_equal(got, want)


def test_threshold_preconditions():
    det = make_detection("img", (0, 0, 1, 1), [1.0, 0.0])
    with pytest.raises(ContractViolation):
        build_training_logit_sets([det], [], theta_iou=0.0)
    with pytest.raises(ContractViolation):
        build_training_logit_sets([det], [], theta_conf=1.5)


# --- uncertainty vectors ---------------------------------------------------


def test_uncertainty_argmax_at_class_mean():
    gmms = far_apart_gmmset()
    mean1 = gmms[1].components[0].mean
    u = uncertainty_vector(gmms, mean1)
    assert u.argmax_class == 1
    assert u.max_loglik == u.log_likelihoods[1]


def test_uncertainty_entries_equal_per_class_calls():
    gmms = far_apart_gmmset(n_classes=3, dim=3)
    logit = np.array([1.0, -2.0, 4.0])
    u = uncertainty_vector(gmms, logit)
    for c in range(3):
        assert u.log_likelihoods[c] == gmm_log_likelihood(gmms[c], logit)


def test_far_query_scores_below_every_training_point(rng):
    sets = {
        0: rng.normal(size=(150, 2)) + [0.0, 0.0],
        1: rng.normal(size=(150, 2)) + [12.0, 0.0],
    }
    gmms = fit_all(sets, 1, EmConfig(seed=0))
    train_logits = np.concatenate([sets[0], sets[1]])
    train_max = np.max(gmms.log_likelihood_matrix(train_logits), axis=1)
    far = np.array([0.0, 40.0])  # > 20 sigma from both blobs
    u = uncertainty_vector(gmms, far)
    assert u.max_loglik < train_max.min()


def test_uncertainty_vector_is_pure():
    gmms = far_apart_gmmset()
    logit = np.array([3.0, 4.0])
    a = uncertainty_vector(gmms, logit)
    b = uncertainty_vector(gmms, logit)
    assert np.array_equal(a.log_likelihoods, b.log_likelihoods)


def test_uncertainty_dimension_mismatch():
    gmms = far_apart_gmmset()
    with pytest.raises(ContractViolation):
        uncertainty_vector(gmms, np.zeros(5))


def test_batch_matches_single():
    gmms = far_apart_gmmset()
    logits = np.array([[0.0, 0.0], [30.0, 0.0], [5.0, -2.0]])
    batch = uncertainty_vectors(gmms, logits)
    for row, u in zip(logits, batch):
        single = uncertainty_vector(gmms, row)
        assert np.array_equal(u.log_likelihoods, single.log_likelihoods)


# --- reject ----------------------------------------------------------------


def _scored(max_logliks):
    out = []
    for i, ll in enumerate(max_logliks):
        det = make_detection(f"img{i}", (0, 0, 1, 1), [1.0, 0.0])
        out.append((det, UncertaintyVector(np.array([ll, ll - 1.0]))))
    return out


def test_reject_minus_infinity_accepts_all():
    accepted, rejected = reject(_scored([-5.0, -20.0, -3.0]), -np.inf)
    assert len(accepted) == 3 and not rejected


def test_reject_plus_infinity_rejects_all():
    accepted, rejected = reject(_scored([-5.0, -20.0, -3.0]), np.inf)
    assert not accepted and len(rejected) == 3


def test_reject_mixed_threshold():
    accepted, rejected = reject(_scored([-5.0, -20.0, -3.0]), -10.0)
    assert sorted(p[1].max_loglik for p in accepted) == [-5.0, -3.0]
    assert [p[1].max_loglik for p in rejected] == [-20.0]


def test_reject_threshold_inclusive():
    accepted, _ = reject(_scored([-10.0]), -10.0)
    assert len(accepted) == 1


@settings(max_examples=50)
@given(st.lists(st.floats(-100, 100), min_size=0, max_size=30),
       st.floats(-120, 120))
def test_reject_partition_and_monotonicity(lls, theta):
    scored = _scored(lls)
    accepted, rejected = reject(scored, theta)
    assert len(accepted) + len(rejected) == len(scored)
    assert not (set(id(p) for p in accepted) & set(id(p) for p in rejected))
    higher_accepted, _ = reject(scored, theta + 1.0)
    assert len(higher_accepted) <= len(accepted)


# --- class mismatch / theta selection / proxy split -------------------------


def test_flag_class_mismatch():
    det = make_detection("img", (0, 0, 1, 1), [0.0, 5.0, 0.0])  # predicts 1
    assert not flag_class_mismatch(det, UncertaintyVector(np.array([-9.0, -1.0, -5.0])))
    assert flag_class_mismatch(det, UncertaintyVector(np.array([-1.0, -9.0, -5.0])))


def test_select_theta_ose_quartile():
    theta = select_theta_ose([-5.0, -10.0, -20.0, -30.0], 0.25)
    assert theta == -5.0
    # exactly one negative accepted at the inclusive threshold
    assert sum(s >= theta for s in [-5.0, -10.0, -20.0, -30.0]) == 1


def test_select_theta_ose_zero_rate_rejects_everything():
    scores = [-5.0, -10.0]
    theta = select_theta_ose(scores, 0.0)
    assert all(s < theta for s in scores)


def test_select_theta_ose_empty_scores():
    with pytest.raises(DataError):
        select_theta_ose([], 0.1)


def test_split_correct_misclassified():
    dets = [
        make_detection("a", (0, 0, 10, 10), _softmax_logits_for(0)),  # matches class 0: correct
        make_detection("b", (0, 0, 10, 10), _softmax_logits_for(1)),  # matches class 0: wrong
        make_detection("c", (50, 50, 60, 60), _softmax_logits_for(2)),  # no overlap
    ]
    gts = [
        make_gt("a", (0, 0, 10, 11), 0),
        make_gt("b", (0, 0, 10, 11), 0),
        make_gt("c", (0, 0, 10, 10), 2),
    ]
    correct, mis = split_correct_misclassified(dets, gts)
    assert len(correct) == 1 and correct[0][1] == 0
    assert len(mis) == 1 and mis[0][1] == 1
