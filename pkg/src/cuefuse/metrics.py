"""Evaluation metrics: image/pixel ROC-AUC and PRO-AUC with an FPR limit.

ROC-AUC is the exact Mann-Whitney statistic (ties count one half). PRO
sweeps quantile-spaced thresholds over the pooled map values and averages
the per-region overlap across every ground-truth component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import label as _cc_label
from scipy.stats import rankdata

from .feature_io import BinaryMask
from .maps import AnomalyMap

DEFAULT_FPR_LIMIT = 0.3
DEFAULT_PRO_THRESHOLDS = 200


@dataclass(frozen=True)
class RocResult:
    """AUC plus the (threshold, tpr, fpr) sweep, thresholds descending."""

    auc: float
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray

    @property
    def operating_points(self):
        return list(zip(self.thresholds, self.tpr, self.fpr))


@dataclass(frozen=True)
class ProResult:
    pro_auc: float
    curve_fpr: np.ndarray
    curve_pro: np.ndarray
    fpr_limit: float


def roc_auc(scores, labels) -> RocResult:
    """Exact ROC-AUC: P(score_pos > score_neg) + 0.5 * P(equal)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")

    ranks = rankdata(scores, method="average")
    auc = (ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    # one operating point per distinct threshold (prediction: score >= t)
    last_of_value = np.r_[np.nonzero(np.diff(sorted_scores))[0], scores.shape[0] - 1]
    tps = np.cumsum(sorted_labels)[last_of_value]
    fps = (last_of_value + 1) - tps
    return RocResult(auc=float(auc), thresholds=sorted_scores[last_of_value],
                     tpr=tps / n_pos, fpr=fps / n_neg)


def _check_pairs(maps, masks):
    maps = list(maps)
    masks = list(masks)
    if len(maps) != len(masks) or not maps:
        raise ValueError("need equally many (and at least one) maps and masks")
    for amap, mask in zip(maps, masks):
        if amap.values.shape != mask.values.shape:
            raise ValueError(
                f"map shape {amap.values.shape} != mask shape {mask.values.shape}")
    return maps, masks


def pixel_roc_auc(maps, masks) -> RocResult:
    """ROC-AUC over all pixels of all images pooled together."""
    maps, masks = _check_pairs(maps, masks)
    scores = np.concatenate([m.values.ravel() for m in maps])
    labels = np.concatenate([m.values.ravel() for m in masks])
    if labels.min() == labels.max():
        raise ValueError("pooled pixel labels are single-class")
    return roc_auc(scores, labels)


def connected_components(mask: BinaryMask, connectivity: int = 8):
    """Connected components of the positive pixels as (n_i, 2) coordinate arrays."""
    if connectivity == 8:
        structure = np.ones((3, 3), dtype=int)
    elif connectivity == 4:
        structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    else:
        raise ValueError("connectivity must be 4 or 8")
    labeled, n = _cc_label(mask.values, structure=structure)
    return [np.argwhere(labeled == i) for i in range(1, n + 1)]


def pro_auc(maps, masks, fpr_limit: float = DEFAULT_FPR_LIMIT,
            n_thresholds: int = DEFAULT_PRO_THRESHOLDS,
            connectivity: int = 8) -> ProResult:
    """Area under the per-region-overlap curve up to the FPR limit, normalized.

    At each threshold t the prediction is ``map >= t``; FPR pools the negative
    pixels of every image, and the overlap |pred & component| / |component|
    is averaged over all components of all masks. Points are sorted by FPR,
    anchored at (0, 0), linearly interpolated at the limit, and integrated
    by the trapezoid rule.
    """
    if not 0.0 < fpr_limit <= 1.0:
        raise ValueError("fpr_limit must be in (0, 1]")
    if n_thresholds < 2:
        raise ValueError("need at least 2 thresholds")
    maps, masks = _check_pairs(maps, masks)

    components = []  # (image index, coords)
    for i, mask in enumerate(masks):
        for coords in connected_components(mask, connectivity=connectivity):
            components.append((i, coords))
    if not components:
        raise ValueError("no ground-truth components to overlap against")

    neg_values = np.concatenate(
        [m.values[mask.values == 0] for m, mask in zip(maps, masks)])
    if neg_values.size == 0:
        raise ValueError("no negative pixels: masks are all-positive")

    pooled = np.concatenate([m.values.ravel() for m in maps])
    # descending thresholds: predictions only grow along the sweep, so both
    # fpr and pro come out nondecreasing and no re-sorting is needed
    thresholds = np.unique(np.quantile(pooled, np.linspace(0.0, 1.0, n_thresholds)))[::-1]

    comp_values = [maps[i].values[coords[:, 0], coords[:, 1]] for i, coords in components]
    fprs = np.empty(thresholds.shape[0])
    pros = np.empty(thresholds.shape[0])
    for t_idx, t in enumerate(thresholds):
        fprs[t_idx] = np.count_nonzero(neg_values >= t) / neg_values.size
        overlaps = [np.count_nonzero(v >= t) / v.size for v in comp_values]
        pros[t_idx] = float(np.mean(overlaps))

    fprs = np.r_[0.0, fprs]
    pros = np.r_[0.0, pros]

    inside = fprs <= fpr_limit
    cut_fpr = fprs[inside]
    cut_pro = pros[inside]
    beyond = np.nonzero(~inside)[0]
    if beyond.size and cut_fpr.size and cut_fpr[-1] < fpr_limit:
        j = beyond[0]
        x0, x1 = fprs[j - 1], fprs[j]
        y0, y1 = pros[j - 1], pros[j]
        y_at = y0 if x1 == x0 else y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0)
        cut_fpr = np.r_[cut_fpr, fpr_limit]
        cut_pro = np.r_[cut_pro, y_at]
    area = float(np.trapezoid(cut_pro, cut_fpr)) / fpr_limit
    return ProResult(pro_auc=area, curve_fpr=cut_fpr, curve_pro=cut_pro,
                     fpr_limit=fpr_limit)
