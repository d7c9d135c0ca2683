"""Anomaly score maps and the shared reshape -> upsample -> smooth pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

PROVENANCE_TAGS = ("obj", "attr", "pc", "fused")


@dataclass(frozen=True)
class AnomalyMap:
    """Single-channel score map; higher values mean more anomalous."""

    values: np.ndarray
    provenance: str
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ValueError(f"map values must be a non-empty 2-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("map contains non-finite values")
        if self.provenance not in PROVENANCE_TAGS:
            raise ValueError(f"unknown provenance {self.provenance!r}, expected one of {PROVENANCE_TAGS}")
        if self.normalized and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("normalized map has values outside [0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def bilinear_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an (H, W) or (H, W, C) array with half-pixel-center bilinear sampling.

    Source coordinates outside the grid are clamped to the border (edge
    replication), the convention of the usual image-resize routines.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim not in (2, 3):
        raise ValueError(f"expected 2-D or 3-D input, got shape {values.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be positive")
    in_h, in_w = values.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return values.copy()

    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    wy = ys - y0
    wx = xs - x0
    y0c = np.clip(y0, 0, in_h - 1)
    y1c = np.clip(y0 + 1, 0, in_h - 1)
    x0c = np.clip(x0, 0, in_w - 1)
    x1c = np.clip(x0 + 1, 0, in_w - 1)

    v00 = values[y0c[:, None], x0c[None, :]]
    v01 = values[y0c[:, None], x1c[None, :]]
    v10 = values[y1c[:, None], x0c[None, :]]
    v11 = values[y1c[:, None], x1c[None, :]]
    wy = wy[:, None]
    wx = wx[None, :]
    w00 = (1.0 - wy) * (1.0 - wx)
    w01 = (1.0 - wy) * wx
    w10 = wy * (1.0 - wx)
    w11 = wy * wx
    if values.ndim == 3:
        w00, w01, w10, w11 = (w[..., None] for w in (w00, w01, w10, w11))
    return v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11


def gaussian_smooth(values: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur with reflective borders; sigma <= 0 is the identity."""
    values = np.asarray(values, dtype=np.float64)
    if sigma <= 0:
        return values.copy()
    return gaussian_filter(values, sigma=sigma, mode="reflect")


def grid_to_map(grid_scores: np.ndarray, out_h: int, out_w: int, sigma: float,
                provenance: str) -> AnomalyMap:
    """Upsample a patch-grid score array to pixel resolution and smooth it."""
    up = bilinear_resize(np.asarray(grid_scores, dtype=np.float64), out_h, out_w)
    return AnomalyMap(gaussian_smooth(up, sigma), provenance)
