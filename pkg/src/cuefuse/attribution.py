"""Semantic attribution branch.

Models the distribution of mean-pooled patch vectors on normal data and
explains a test image's global deviation by closed-form leave-one-out
ablation: removing patch i from the pool changes the Mahalanobis distance
by an amount attributed to that patch.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feature_io import FeatureBundle
from .gaussian import GaussianModel, fit_gaussian, load_gaussian, mahalanobis, \
    mahalanobis_batch, save_gaussian
from .maps import AnomalyMap, grid_to_map


@dataclass(frozen=True)
class AttributionModel:
    pooled_gaussian: GaussianModel


def mean_pool(patches: np.ndarray) -> np.ndarray:
    """Arithmetic column mean of an (N, D) patch matrix."""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[0] < 1:
        raise ValueError(f"expected a non-empty (N, D) matrix, got shape {patches.shape}")
    return patches.mean(axis=0)


def fit_attribution(train_bundles, reg_scale: float = 1e-3) -> AttributionModel:
    """Fit the pooled-vector Gaussian over all training bundles."""
    pooled = [mean_pool(b.patches) for b in train_bundles]
    if len(pooled) < 2:
        raise ValueError("need at least 2 training bundles")
    return AttributionModel(pooled_gaussian=fit_gaussian(np.stack(pooled), reg_scale=reg_scale))


def score_image(model: AttributionModel, bundle: FeatureBundle) -> float:
    """Mahalanobis distance of the image's mean-pooled vector."""
    return mahalanobis(model.pooled_gaussian, mean_pool(bundle.patches))


def attribute_signed(model: AttributionModel, bundle: FeatureBundle) -> np.ndarray:
    """Signed distance deltas d_full - d_i from ablating each patch.

    Debug channel: the localization path uses the absolute values only.
    """
    patches = np.asarray(bundle.patches, dtype=np.float64)
    n = patches.shape[0]
    if n < 2:
        raise ValueError("leave-one-out ablation needs at least 2 patches")
    g = patches.mean(axis=0)
    # Row i holds the pooled vector with patch i removed: (N*g - p_i) / (N-1).
    ablated = (n * g[None, :] - patches) / (n - 1)
    d_full = mahalanobis(model.pooled_gaussian, g)
    d = mahalanobis_batch(model.pooled_gaussian, ablated)
    return d_full - d


def attribute(model: AttributionModel, bundle: FeatureBundle) -> np.ndarray:
    """Per-patch contribution to the global deviation: |d_full - d_i| >= 0."""
    return np.abs(attribute_signed(model, bundle))


def localize(model: AttributionModel, bundle: FeatureBundle, out_h: int, out_w: int,
             sigma: float = 4.0) -> AnomalyMap:
    """Attribution map; kept unnormalized so fusion sees the raw magnitudes."""
    contributions = attribute(model, bundle)
    grid = contributions.reshape(bundle.grid_h, bundle.grid_w)
    return grid_to_map(grid, out_h, out_w, sigma, "attr")


def save_attribution(model: AttributionModel, path: str | os.PathLike) -> None:
    save_gaussian(model.pooled_gaussian, Path(path) / "pooled_gaussian")


def load_attribution(path: str | os.PathLike) -> AttributionModel:
    return AttributionModel(pooled_gaussian=load_gaussian(Path(path) / "pooled_gaussian"))
