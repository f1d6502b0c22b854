"""Pixelwise anomaly metrics: ranking quality against a binary mask plus
the contrast statistic that operationalizes "spikes" in a difference map.
"""

from __future__ import annotations

import math

import numpy as np

from .data import AnomalyMask, AnomalyScoreMap
from .exceptions import ArgumentError, UndefinedMetricError

CONTRAST_DENOM_FLOOR = 1e-12


def _flatten_pair(score_map: AnomalyScoreMap, mask: AnomalyMask):
    if (score_map.height, score_map.width) != (mask.height, mask.width):
        raise ArgumentError(
            f"score map {score_map.height}x{score_map.width} does not match "
            f"mask {mask.height}x{mask.width}"
        )
    scores = score_map.values.ravel().astype(np.float64)
    labels = mask.values.ravel().astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise UndefinedMetricError(
            f"mask has a single class (positives={n_pos} of {labels.size})"
        )
    return scores, labels, n_pos


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average rank of their group."""
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    cum = np.cumsum(counts)
    avg = cum - (counts - 1) / 2.0
    return avg[inverse]


def auroc(score_map: AnomalyScoreMap, mask: AnomalyMask) -> float:
    """Probability a random anomalous pixel outscores a random normal one,
    ties counted 1/2 (Mann-Whitney U over average ranks)."""
    scores, labels, n_pos = _flatten_pair(score_map, mask)
    n_neg = labels.size - n_pos
    ranks = _average_ranks(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(score_map: AnomalyScoreMap, mask: AnomalyMask) -> float:
    """Area under precision-recall, stepped at each distinct score value
    in descending order."""
    scores, labels, n_pos = _flatten_pair(score_map, mask)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    tp_cum = np.cumsum(labels[order])
    # inclusive index of the last element of each distinct-score group
    cuts = np.nonzero(np.diff(sorted_scores))[0]
    cuts = np.append(cuts, scores.size - 1)
    tp = tp_cum[cuts].astype(np.float64)
    precision = tp / (cuts + 1)
    recall = tp / n_pos
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * precision))


def contrast_ratio(score_map: AnomalyScoreMap, mask: AnomalyMask) -> float:
    """Mean score inside the mask over mean score outside; +inf when the
    background mean vanishes while the anomaly mean does not."""
    scores, labels, _ = _flatten_pair(score_map, mask)
    inside = float(scores[labels].mean())
    outside = float(scores[~labels].mean())
    if outside <= CONTRAST_DENOM_FLOOR and inside > CONTRAST_DENOM_FLOOR:
        return math.inf
    return inside / max(outside, CONTRAST_DENOM_FLOOR)


def noise_level(score_map: AnomalyScoreMap, mask: AnomalyMask) -> float:
    """Mean score over normal (mask = 0) pixels."""
    scores, labels, _ = _flatten_pair(score_map, mask)
    return float(scores[~labels].mean())


def is_constant(score_map: AnomalyScoreMap) -> bool:
    vals = score_map.values
    return bool(vals.max() == vals.min())
