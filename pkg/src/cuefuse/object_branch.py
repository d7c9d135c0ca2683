"""Object-composition branch.

Learns the distribution of global image vectors plus foreground/background
patch prototypes from normal data. Test images are scored by the deviation
of their global vector; localization highlights patches belonging to
neither prototype, with strong foreground responses suppressed by mean
replacement.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feature_io import FeatureBundle, _read_kv, _write_kv
from .gaussian import GaussianModel, fit_gaussian, load_gaussian, mahalanobis, save_gaussian
from .maps import AnomalyMap, grid_to_map

DEFAULT_TAU = 1.14
DEFAULT_RATIO_EPSILON = 1e-8


@dataclass(frozen=True)
class PrototypePair:
    """Cluster centers for normal foreground (coal/gangue) and background (belt)."""

    mu_fg: np.ndarray
    mu_bg: np.ndarray
    count_fg: int
    count_bg: int

    def __post_init__(self):
        mu_fg = np.asarray(self.mu_fg, dtype=np.float64)
        mu_bg = np.asarray(self.mu_bg, dtype=np.float64)
        if mu_fg.shape != mu_bg.shape or mu_fg.ndim != 1:
            raise ValueError("prototypes must be 1-D vectors of equal length")
        # Foreground is the smaller cluster; ties are broken in its favor.
        if self.count_fg > self.count_bg:
            raise ValueError("foreground cluster must not outnumber the background cluster")
        if np.array_equal(mu_fg, mu_bg):
            raise ValueError("degenerate prototypes: both clusters share a center")
        object.__setattr__(self, "mu_fg", mu_fg)
        object.__setattr__(self, "mu_bg", mu_bg)


@dataclass(frozen=True)
class ObjectBranchModel:
    cls_gaussian: GaussianModel
    prototypes: PrototypePair
    tau: float = DEFAULT_TAU
    ratio_epsilon: float = DEFAULT_RATIO_EPSILON

    def __post_init__(self):
        if self.tau <= 1.0:
            raise ValueError("tau must exceed 1 (it thresholds a background/foreground ratio)")
        if self.ratio_epsilon <= 0:
            raise ValueError("ratio_epsilon must be positive")


def _nearest_center_assign(tokens: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d0 = np.linalg.norm(tokens - centers[0], axis=1)
    d1 = np.linalg.norm(tokens - centers[1], axis=1)
    return (d1 < d0).astype(np.intp)


def kmeans2(tokens: np.ndarray, seed: int, max_iters: int = 300):
    """Two-cluster Lloyd's algorithm with seeded k-means++ initialization.

    Iterates to an assignment fixpoint (or max_iters). An emptied cluster is
    re-seeded at the point farthest from the other center. Returns
    (centers (2, D), assignments (P,) of {0, 1}); each center is the mean of
    its assigned rows.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[0] < 2:
        raise ValueError("need a (P, D) matrix with P >= 2")
    if np.all(tokens == tokens[0]):
        raise ValueError("all rows identical: no two-cluster structure")

    rng = np.random.default_rng(seed)
    first = int(rng.integers(tokens.shape[0]))
    d2 = np.sum((tokens - tokens[first]) ** 2, axis=1)
    second = int(rng.choice(tokens.shape[0], p=d2 / d2.sum()))
    centers = np.stack([tokens[first], tokens[second]])

    assignments = None
    for _ in range(max_iters):
        new_assign = _nearest_center_assign(tokens, centers)
        for j in (0, 1):
            if not np.any(new_assign == j):
                other = centers[1 - j]
                far = int(np.argmax(np.linalg.norm(tokens - other, axis=1)))
                centers = centers.copy()
                centers[j] = tokens[far]
                new_assign = _nearest_center_assign(tokens, centers)
        if assignments is not None and np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        centers = np.stack([tokens[assignments == j].mean(axis=0) for j in (0, 1)])

    centers = np.stack([tokens[assignments == j].mean(axis=0) for j in (0, 1)])
    return centers, assignments


def fit_object_branch(train_bundles, tau: float = DEFAULT_TAU, seed: int = 22,
                      reg_scale: float = 1e-3,
                      ratio_epsilon: float = DEFAULT_RATIO_EPSILON,
                      token_subsample: float | None = None,
                      max_iters: int = 300) -> ObjectBranchModel:
    """Build the normal references: global-vector Gaussian + fg/bg prototypes.

    ``token_subsample`` optionally keeps a uniform fraction of the pooled
    patch tokens before clustering (full-scale pools run to millions of rows).
    """
    train_bundles = list(train_bundles)
    if len(train_bundles) < 2:
        raise ValueError("need at least 2 training bundles")
    for b in train_bundles:
        if b.global_vec is None:
            raise ValueError(f"bundle {b.image_id!r} has no global vector")

    cls_matrix = np.stack([np.asarray(b.global_vec, dtype=np.float64) for b in train_bundles])
    cls_gaussian = fit_gaussian(cls_matrix, reg_scale=reg_scale)

    pooled = np.concatenate([np.asarray(b.patches, dtype=np.float64) for b in train_bundles])
    if token_subsample is not None:
        if not 0.0 < token_subsample <= 1.0:
            raise ValueError("token_subsample must be in (0, 1]")
        if token_subsample < 1.0:
            rng = np.random.default_rng(seed)
            keep = max(2, int(token_subsample * pooled.shape[0]))
            pooled = pooled[rng.choice(pooled.shape[0], size=keep, replace=False)]

    centers, assignments = kmeans2(pooled, seed=seed, max_iters=max_iters)
    n0 = int(np.sum(assignments == 0))
    n1 = assignments.shape[0] - n0
    # The smaller cluster is foreground; on a tie, cluster 1 takes foreground.
    if n0 < n1:
        prototypes = PrototypePair(mu_fg=centers[0], mu_bg=centers[1], count_fg=n0, count_bg=n1)
    else:
        prototypes = PrototypePair(mu_fg=centers[1], mu_bg=centers[0], count_fg=n1, count_bg=n0)
    return ObjectBranchModel(cls_gaussian=cls_gaussian, prototypes=prototypes,
                             tau=tau, ratio_epsilon=ratio_epsilon)


def score_image(model: ObjectBranchModel, bundle: FeatureBundle) -> float:
    """Global semantic deviation: Mahalanobis distance of the global vector."""
    if bundle.global_vec is None:
        raise ValueError(f"bundle {bundle.image_id!r} has no global vector")
    return mahalanobis(model.cls_gaussian, np.asarray(bundle.global_vec, dtype=np.float64))


def patch_ratio_scores(model: ObjectBranchModel, patches: np.ndarray) -> np.ndarray:
    """Per-patch anomaly scores: foreground-biased ratio with mean replacement.

    r_i = d_bg(i) / (d_fg(i) + eps); patches with r_i above tau (confident
    foreground) are replaced with the mean ratio over this image's
    background-classified patches, exposing regions that match neither
    prototype. If no patch classifies as background, the all-patch mean is
    used instead.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[1] != model.prototypes.mu_fg.shape[0]:
        raise ValueError(f"expected (N, {model.prototypes.mu_fg.shape[0]}) patches, "
                         f"got shape {patches.shape}")
    d_fg = np.linalg.norm(patches - model.prototypes.mu_fg, axis=1)
    d_bg = np.linalg.norm(patches - model.prototypes.mu_bg, axis=1)
    r = d_bg / (d_fg + model.ratio_epsilon)
    background = d_bg <= d_fg
    replacement = r[background].mean() if background.any() else r.mean()
    return np.where(r > model.tau, replacement, r)


def localize(model: ObjectBranchModel, bundle: FeatureBundle, out_h: int, out_w: int,
             sigma: float = 4.0) -> AnomalyMap:
    """Pixel-level map: ratio scores reshaped to the grid, upsampled, smoothed."""
    scores = patch_ratio_scores(model, bundle.patches)
    grid = scores.reshape(bundle.grid_h, bundle.grid_w)
    return grid_to_map(grid, out_h, out_w, sigma, "obj")


def save_object_branch(model: ObjectBranchModel, path: str | os.PathLike,
                       seed: int | None = None) -> None:
    path = Path(path)
    save_gaussian(model.cls_gaussian, path / "cls_gaussian")
    np.save(path / "prototypes.npy",
            np.stack([model.prototypes.mu_fg, model.prototypes.mu_bg]),
            allow_pickle=False)
    meta = {
        "tau": repr(model.tau),
        "ratio_epsilon": repr(model.ratio_epsilon),
        "count_fg": model.prototypes.count_fg,
        "count_bg": model.prototypes.count_bg,
    }
    if seed is not None:
        meta["seed"] = seed
    _write_kv(path / "meta.txt", meta)


def load_object_branch(path: str | os.PathLike) -> ObjectBranchModel:
    path = Path(path)
    meta = _read_kv(path / "meta.txt")
    protos = np.load(path / "prototypes.npy", allow_pickle=False)
    prototypes = PrototypePair(mu_fg=protos[0], mu_bg=protos[1],
                               count_fg=int(meta["count_fg"]),
                               count_bg=int(meta["count_bg"]))
    return ObjectBranchModel(
        cls_gaussian=load_gaussian(path / "cls_gaussian"),
        prototypes=prototypes,
        tau=float(meta["tau"]),
        ratio_epsilon=float(meta["ratio_epsilon"]),
    )
