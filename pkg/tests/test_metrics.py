import math

import numpy as np
import pytest

from styleback.data import AnomalyMask, AnomalyScoreMap
from styleback.exceptions import ArgumentError, UndefinedMetricError
from styleback.metrics import (
    auroc,
    average_precision,
    contrast_ratio,
    is_constant,
    noise_level,
)


def pairwise_auroc_oracle(scores: np.ndarray, labels: np.ndarray) -> float:
    """O(n^2) Mann-Whitney oracle: wins + half-credit ties over all pairs."""
    pos = scores[labels.astype(bool)]
    neg = scores[~labels.astype(bool)]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def threshold_ap_oracle(scores: np.ndarray, labels: np.ndarray) -> float:
    """Enumerate every distinct score as a threshold, descending."""
    labels = labels.astype(bool)
    n_pos = labels.sum()
    ap = 0.0
    prev_recall = 0.0
    for threshold in sorted(set(scores.tolist()), reverse=True):
        predicted = scores >= threshold
        tp = (predicted & labels).sum()
        precision = tp / predicted.sum()
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return float(ap)


def random_instance(rng, max_side=32, quantize=True):
    h = int(rng.integers(2, max_side + 1))
    w = int(rng.integers(2, max_side + 1))
    scores = rng.random((h, w))
    if quantize:  # coarse levels force plenty of ties
        scores = np.round(scores * 8) / 8
    mask = (rng.random((h, w)) < rng.uniform(0.1, 0.6)).astype(np.uint8)
    if mask.sum() == 0:
        mask[0, 0] = 1
    if mask.sum() == mask.size:
        mask[0, 0] = 0
    return AnomalyScoreMap(scores), AnomalyMask(mask)


# ---------------------------------------------------------------------------
# auroc

def _mask_checker():
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[2:5, 3:7] = 1
    return AnomalyMask(mask)


def test_auroc_perfect_separation():
    mask = _mask_checker()
    score = AnomalyScoreMap(mask.values.astype(np.float64))
    assert auroc(score, mask) == 1.0


def test_auroc_perfect_inversion():
    mask = _mask_checker()
    score = AnomalyScoreMap(1.0 - mask.values.astype(np.float64))
    assert auroc(score, mask) == 0.0


def test_auroc_constant_scores_is_half():
    mask = _mask_checker()
    score = AnomalyScoreMap(np.full((8, 8), 0.37))
    assert auroc(score, mask) == 0.5


def test_auroc_matches_pairwise_oracle(rng):
    for _ in range(50):
        score, mask = random_instance(rng)
        got = auroc(score, mask)
        expected = pairwise_auroc_oracle(score.values.ravel(), mask.values.ravel())
        assert abs(got - expected) <= 1e-9


def test_auroc_invariant_under_monotone_transform(rng):
    score, mask = random_instance(rng)
    base = auroc(score, mask)
    squared = AnomalyScoreMap(score.values ** 2)
    affine = AnomalyScoreMap(0.5 * score.values + 0.1)
    assert auroc(squared, mask) == base
    assert auroc(affine, mask) == base


def test_auroc_complement_without_ties(rng):
    h = w = 8
    scores = rng.permutation(h * w).reshape(h, w) / (h * w - 1)  # all distinct
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[:3] = 1
    a = auroc(AnomalyScoreMap(scores), AnomalyMask(mask))
    b = auroc(AnomalyScoreMap(1.0 - scores), AnomalyMask(mask))
    assert abs((1.0 - a) - b) < 1e-12


def test_auroc_single_class_mask_is_undefined():
    score = AnomalyScoreMap(np.random.default_rng(0).random((8, 8)))
    with pytest.raises(UndefinedMetricError):
        auroc(score, AnomalyMask(np.zeros((8, 8), dtype=np.uint8)))
    with pytest.raises(UndefinedMetricError):
        auroc(score, AnomalyMask(np.ones((8, 8), dtype=np.uint8)))


def test_auroc_dimension_mismatch():
    score = AnomalyScoreMap(np.zeros((8, 8)))
    with pytest.raises(ArgumentError):
        auroc(score, _masked(16))


def _masked(side):
    mask = np.zeros((side, side), dtype=np.uint8)
    mask[0, 0] = 1
    return AnomalyMask(mask)


# ---------------------------------------------------------------------------
# average precision

def test_ap_perfect_separation():
    mask = _mask_checker()
    score = AnomalyScoreMap(mask.values.astype(np.float64))
    assert average_precision(score, mask) == 1.0


def test_ap_constant_scores_equals_prevalence():
    mask = _mask_checker()
    score = AnomalyScoreMap(np.full((8, 8), 0.2))
    prevalence = mask.values.sum() / mask.values.size
    assert average_precision(score, mask) == prevalence


def test_ap_matches_threshold_enumeration_oracle(rng):
    for _ in range(25):
        score, mask = random_instance(rng, max_side=12)
        got = average_precision(score, mask)
        expected = threshold_ap_oracle(score.values.ravel(), mask.values.ravel())
        assert abs(got - expected) <= 1e-9


# ---------------------------------------------------------------------------
# contrast ratio / noise level

def test_contrast_zero_background_is_inf_sentinel():
    scores = AnomalyScoreMap(np.array([[1.0, 0.0], [0.0, 0.0]]))
    mask = AnomalyMask(np.array([[1, 0], [0, 0]], dtype=np.uint8))
    assert contrast_ratio(scores, mask) == math.inf


def test_contrast_hand_case_nine():
    scores = AnomalyScoreMap(np.array([[0.9, 0.1], [0.1, 0.1]]))
    mask = AnomalyMask(np.array([[1, 0], [0, 0]], dtype=np.uint8))
    inside, outside = 0.9, np.mean([0.1, 0.1, 0.1])
    assert contrast_ratio(scores, mask) == inside / outside
    assert contrast_ratio(scores, mask) == pytest.approx(9.0, rel=1e-12)


def test_contrast_uniform_scores_is_one():
    mask = _mask_checker()
    scores = AnomalyScoreMap(np.full((8, 8), 0.25))  # binary-exact mean
    assert contrast_ratio(scores, mask) == 1.0
    nonbinary = AnomalyScoreMap(np.full((8, 8), 0.3))
    assert contrast_ratio(nonbinary, mask) == pytest.approx(1.0, rel=1e-12)


def test_contrast_all_zero_scores_is_zero():
    mask = _mask_checker()
    scores = AnomalyScoreMap(np.zeros((8, 8)))
    assert contrast_ratio(scores, mask) == 0.0


def test_noise_level_is_outside_mean(rng):
    score, mask = random_instance(rng)
    outside = score.values.ravel()[~mask.values.ravel().astype(bool)]
    assert noise_level(score, mask) == float(outside.mean())


def test_is_constant():
    assert is_constant(AnomalyScoreMap(np.zeros((4, 4))))
    assert not is_constant(AnomalyScoreMap(np.eye(4) * 0.5))
