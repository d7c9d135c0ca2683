import numpy as np
import pytest

from cuefuse.feature_io import BinaryMask
from cuefuse.maps import AnomalyMap
from cuefuse.metrics import connected_components, pixel_roc_auc, pro_auc, roc_auc


def amap(values):
    return AnomalyMap(np.asarray(values, dtype=np.float64), "fused")


def mask(values):
    return BinaryMask(np.asarray(values, dtype=np.uint8))


# -- oracles ---------------------------------------------------------------


def pairwise_auc(scores, labels):
    """O(n^2) Mann-Whitney: wins + half-ties over all pos/neg pairs."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def flood_fill_components(values):
    h, w = values.shape
    seen = np.zeros((h, w), dtype=bool)
    comps = []
    for i in range(h):
        for j in range(w):
            if values[i, j] and not seen[i, j]:
                stack = [(i, j)]
                seen[i, j] = True
                comp = []
                while stack:
                    a, b = stack.pop()
                    comp.append((a, b))
                    for da in (-1, 0, 1):
                        for db in (-1, 0, 1):
                            na, nb = a + da, b + db
                            if 0 <= na < h and 0 <= nb < w and values[na, nb] \
                                    and not seen[na, nb]:
                                seen[na, nb] = True
                                stack.append((na, nb))
                comps.append(frozenset(comp))
    return set(comps)


def pro_oracle(map_arrays, mask_arrays, fpr_limit):
    """Exhaustive sweep over every distinct pooled value, loop arithmetic only."""
    comps = []
    for img, values in enumerate(mask_arrays):
        for comp in flood_fill_components(values):
            comps.append((img, comp))
    negs = [(img, i, j) for img, values in enumerate(mask_arrays)
            for i in range(values.shape[0]) for j in range(values.shape[1])
            if values[i, j] == 0]
    points = [(0.0, 0.0)]
    # descending thresholds so the walk follows the growing-prediction sweep
    for t in sorted(set(float(v) for m in map_arrays for v in m.ravel()), reverse=True):
        fp = sum(1 for img, i, j in negs if map_arrays[img][i, j] >= t)
        overlaps = []
        for img, comp in comps:
            hit = sum(1 for (i, j) in comp if map_arrays[img][i, j] >= t)
            overlaps.append(hit / len(comp))
        points.append((fp / len(negs), sum(overlaps) / len(overlaps)))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        if x1 <= fpr_limit:
            area += (x1 - x0) * (y0 + y1) / 2.0
        elif x0 < fpr_limit:
            y_at = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0)
            area += (fpr_limit - x0) * (y0 + y_at) / 2.0
    return area / fpr_limit


# -- image-level ROC-AUC -------------------------------------------------------


def test_perfect_separation():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auc == 1.0


def test_all_ties_give_half():
    assert roc_auc([0.5] * 6, [0, 1, 0, 1, 0, 1]).auc == 0.5


def test_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(5, 30))
        scores = rng.integers(0, 6, size=n).astype(float)  # plenty of ties
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            continue
        assert abs(roc_auc(scores, labels).auc - pairwise_auc(scores, labels)) < 1e-12


def test_label_flip_without_ties():
    rng = np.random.default_rng(1)
    scores = rng.permutation(20).astype(float)  # distinct scores
    labels = np.r_[np.zeros(10, dtype=int), np.ones(10, dtype=int)]
    a = roc_auc(scores, labels).auc
    b = roc_auc(scores, 1 - labels).auc
    assert a + b == pytest.approx(1.0, abs=1e-12)


def test_monotone_transform_invariance():
    rng = np.random.default_rng(2)
    scores = rng.normal(size=30)
    labels = rng.integers(0, 2, size=30)
    labels[0], labels[1] = 0, 1
    a = roc_auc(scores, labels).auc
    b = roc_auc(np.exp(scores * 2.0) + 3.0, labels).auc
    assert a == pytest.approx(b, abs=1e-12)


def test_operating_points_monotone():
    rng = np.random.default_rng(3)
    result = roc_auc(rng.normal(size=40), rng.permutation([0, 1] * 20))
    assert (np.diff(result.fpr) >= 0).all()
    assert (np.diff(result.tpr) >= 0).all()
    assert (np.diff(result.thresholds) <= 0).all()


def test_single_class_rejected():
    with pytest.raises(ValueError, match="both classes"):
        roc_auc([0.1, 0.2], [1, 1])


# -- pixel-level ROC-AUC ----------------------------------------------------------


def test_maps_equal_masks_is_perfect():
    rng = np.random.default_rng(4)
    masks = [(rng.random((8, 8)) < 0.3).astype(np.uint8) for _ in range(3)]
    masks[0][2, 2] = 1  # at least one positive overall
    result = pixel_roc_auc([amap(m.astype(float)) for m in masks],
                           [mask(m) for m in masks])
    assert result.auc == 1.0


def test_noise_maps_score_half():
    rng = np.random.default_rng(5)
    maps, masks = [], []
    for _ in range(10):
        maps.append(amap(rng.random((100, 100))))
        m = np.zeros((100, 100), dtype=np.uint8)
        m[40:60, 40:60] = 1
        masks.append(mask(m))
    assert pixel_roc_auc(maps, masks).auc == pytest.approx(0.5, abs=0.02)


def test_two_by_two_hand_case():
    result = pixel_roc_auc([amap([[0.1, 0.9], [0.2, 0.8]])],
                           [mask([[0, 1], [0, 1]])])
    assert result.auc == 1.0


def test_normal_images_contribute_negatives():
    anomalous = mask([[0, 1], [0, 0]])
    normal = mask(np.zeros((2, 2)))
    good = pixel_roc_auc([amap([[0.0, 1.0], [0.0, 0.0]]), amap(np.zeros((2, 2)))],
                         [anomalous, normal])
    noisy = pixel_roc_auc([amap([[0.0, 1.0], [0.0, 0.0]]), amap(np.full((2, 2), 2.0))],
                          [anomalous, normal])
    assert good.auc == 1.0
    assert noisy.auc < 1.0  # the normal image's high map hurts


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape"):
        pixel_roc_auc([amap(np.zeros((2, 2)))], [mask(np.zeros((3, 3)))])


def test_single_class_pixels_rejected():
    with pytest.raises(ValueError, match="single-class"):
        pixel_roc_auc([amap(np.zeros((2, 2)))], [mask(np.zeros((2, 2)))])


# -- connected components -----------------------------------------------------------


def test_diagonal_pixels_join_under_8_connectivity():
    values = np.zeros((4, 4), dtype=np.uint8)
    values[1, 1] = values[2, 2] = 1
    comps = connected_components(mask(values))
    assert len(comps) == 1
    assert len(comps[0]) == 2


def test_diagonal_pixels_split_under_4_connectivity():
    values = np.zeros((4, 4), dtype=np.uint8)
    values[1, 1] = values[2, 2] = 1
    assert len(connected_components(mask(values), connectivity=4)) == 2


def test_empty_mask_has_no_components():
    assert connected_components(mask(np.zeros((3, 3)))) == []


def test_components_match_flood_fill_oracle():
    rng = np.random.default_rng(6)
    for _ in range(10):
        values = (rng.random((16, 16)) < 0.25).astype(np.uint8)
        got = {frozenset(map(tuple, comp)) for comp in connected_components(mask(values))}
        assert got == flood_fill_components(values)
        covered = sorted(pt for comp in got for pt in comp)
        assert covered == sorted(map(tuple, np.argwhere(values)))


# -- PRO-AUC ------------------------------------------------------------------------


def two_component_instance(rng):
    gt = np.zeros((8, 8), dtype=np.uint8)
    gt[1:3, 1:3] = 1
    gt[5:7, 4:7] = 1
    graded = rng.random((8, 8)) * 0.4
    graded[gt == 1] += rng.random((gt == 1).sum()) * 0.8
    return graded, gt


def test_perfect_localizer():
    rng = np.random.default_rng(7)
    gts = [(rng.random((8, 8)) < 0.25).astype(np.uint8) for _ in range(3)]
    gts[0][4, 4] = 1
    result = pro_auc([amap(g.astype(float)) for g in gts], [mask(g) for g in gts])
    assert result.pro_auc == pytest.approx(1.0, abs=1e-9)


def test_adversarial_complement_scores_zero():
    gt = np.zeros((8, 8), dtype=np.uint8)
    gt[2:5, 2:5] = 1
    result = pro_auc([amap(1.0 - gt.astype(float))], [mask(gt)])
    assert result.pro_auc == pytest.approx(0.0, abs=1e-12)


def test_matches_exhaustive_oracle():
    rng = np.random.default_rng(8)
    for _ in range(5):
        m1, g1 = two_component_instance(rng)
        m2, g2 = two_component_instance(rng)
        got = pro_auc([amap(m1), amap(m2)], [mask(g1), mask(g2)]).pro_auc
        expected = pro_oracle([m1, m2], [g1, g2], 0.3)
        assert abs(got - expected) < 1e-3


def test_invariant_under_increasing_transform():
    rng = np.random.default_rng(9)
    m, g = two_component_instance(rng)
    a = pro_auc([amap(m)], [mask(g)]).pro_auc
    b = pro_auc([amap(np.exp(3.0 * m))], [mask(g)]).pro_auc
    assert a == pytest.approx(b, abs=1e-9)


def test_smaller_fpr_limit_never_increases_auc_on_monotone_curves():
    rng = np.random.default_rng(10)
    m, g = two_component_instance(rng)
    wide = pro_auc([amap(m)], [mask(g)], fpr_limit=0.3)
    narrow = pro_auc([amap(m)], [mask(g)], fpr_limit=0.1)
    assert (np.diff(wide.curve_pro) >= -1e-12).all()  # curve is nondecreasing
    assert narrow.pro_auc <= wide.pro_auc + 1e-12


def test_curve_respects_limit():
    rng = np.random.default_rng(11)
    m, g = two_component_instance(rng)
    result = pro_auc([amap(m)], [mask(g)])
    assert (result.curve_fpr <= result.fpr_limit + 1e-15).all()


def test_no_components_rejected():
    with pytest.raises(ValueError, match="components"):
        pro_auc([amap(np.zeros((4, 4)))], [mask(np.zeros((4, 4)))])


def test_all_positive_mask_rejected():
    with pytest.raises(ValueError, match="negative"):
        pro_auc([amap(np.zeros((4, 4)))], [mask(np.ones((4, 4)))])
