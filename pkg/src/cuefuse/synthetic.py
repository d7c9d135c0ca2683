"""Synthetic feature corpus with known ground truth.

Normal images mix background and foreground token clusters on a square
grid; anomalous images overwrite a rectangular block of cells (~10% of the
grid) with tokens whose mean is shifted by several noise sigmas. The same
cell layout feeds all three branch tags with independent noise, and the
global vector is a fixed linear image of the mean token, so every branch
sees the anomaly where the mask says it is.

Each tag additionally gets one small per-image distractor block: a few
adjacent cells shifted together in a random direction, milder than the
true anomaly, independent across tags, and never part of the ground
truth. Every single branch falsely flags its own distractors; only
cross-branch consensus suppresses them.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .feature_io import (BinaryMask, DatasetManifest, FeatureBundle, ManifestEntry,
                         save_bundle, save_dataset_manifest, save_mask)

OBJ_TAG = "synth-obj"
ATTR_TAG = "synth-attr"
PC_TAG = "synth-pc"


@dataclass
class SyntheticConfig:
    n_train: int = 200
    n_test_normal: int = 100
    n_test_anomalous: int = 100
    grid: int = 16
    dims: dict = field(default_factory=lambda: {OBJ_TAG: 16, ATTR_TAG: 16, PC_TAG: 12})
    image_size: int = 64
    fg_fraction: float = 0.3
    anomaly_fraction: float = 0.10
    anomaly_shift: float = 6.0  # in units of the token noise sigma
    distractor_blocks: int = 1
    distractor_side: int = 5  # matches the anomaly footprint so smoothing treats both alike
    distractor_shift: float = 4.0
    cluster_separation: float = 10.0
    token_noise: float = 1.0
    cls_noise: float = 0.05
    seed: int = 22

    def __post_init__(self):
        if self.image_size % self.grid != 0:
            raise ValueError("image_size must be a multiple of the grid size")
        if not 0.0 < self.anomaly_fraction < 1.0:
            raise ValueError("anomaly_fraction must be in (0, 1)")


class _TagModel:
    """Cluster centers (background / foreground / anomaly) for one backbone tag."""

    def __init__(self, dim: int, cfg: SyntheticConfig, rng: np.random.Generator):
        sigma = cfg.token_noise
        self.c_bg = rng.normal(size=dim)
        fg_dir = rng.normal(size=dim)
        fg_dir /= np.linalg.norm(fg_dir)
        self.c_fg = self.c_bg + cfg.cluster_separation * sigma * fg_dir
        anom_dir = rng.normal(size=dim)
        anom_dir -= (anom_dir @ fg_dir) * fg_dir  # decorrelate from the fg axis
        anom_dir /= np.linalg.norm(anom_dir)
        self.c_anom = self.c_bg + cfg.anomaly_shift * sigma * anom_dir
        self.centers = np.stack([self.c_bg, self.c_fg, self.c_anom])

    def tokens(self, cell_types: np.ndarray, cfg: SyntheticConfig, rng: np.random.Generator):
        g = cell_types.shape[0]
        flat = cell_types.reshape(-1)
        dim = self.centers.shape[1]
        sigma = cfg.token_noise
        out = self.centers[flat] + sigma * rng.normal(size=(flat.shape[0], dim))
        side = min(cfg.distractor_side, g)
        for _ in range(cfg.distractor_blocks):
            top = int(rng.integers(0, g - side + 1))
            left = int(rng.integers(0, g - side + 1))
            direction = rng.normal(size=dim)
            direction /= np.linalg.norm(direction)
            block = np.zeros((g, g), dtype=bool)
            block[top:top + side, left:left + side] = True
            cells = np.nonzero(block.reshape(-1) & (flat != 2))[0]  # keep the anomaly intact
            out[cells] += cfg.distractor_shift * sigma * direction
        return out


def _cell_layout(cfg: SyntheticConfig, anomalous: bool, rng: np.random.Generator):
    """Per-cell type grid: 0 background, 1 foreground, 2 anomaly block."""
    g = cfg.grid
    types = (rng.random((g, g)) < cfg.fg_fraction).astype(np.intp)
    if anomalous:
        side = max(1, round(np.sqrt(cfg.anomaly_fraction * g * g)))
        side = min(side, g)
        top = int(rng.integers(0, g - side + 1))
        left = int(rng.integers(0, g - side + 1))
        types[top:top + side, left:left + side] = 2
    return types


def generate_dataset(cfg: SyntheticConfig, root: str | os.PathLike) -> DatasetManifest:
    """Write bundles for all three tags, masks, and dataset.json under root."""
    root = Path(root)
    rng = np.random.default_rng(cfg.seed)
    tags = sorted(cfg.dims)
    models = {tag: _TagModel(cfg.dims[tag], cfg, rng) for tag in tags}
    cls_mix = rng.normal(size=(cfg.dims[OBJ_TAG], cfg.dims[OBJ_TAG])) / np.sqrt(cfg.dims[OBJ_TAG])

    splits = {"train_normal": [], "test_normal": [], "test_anomalous": []}
    plan = (
        [("train_normal", f"train_{i:04d}", False) for i in range(cfg.n_train)]
        + [("test_normal", f"test_n_{i:04d}", False) for i in range(cfg.n_test_normal)]
        + [("test_anomalous", f"test_a_{i:04d}", True) for i in range(cfg.n_test_anomalous)]
    )
    scale = cfg.image_size // cfg.grid
    for split, image_id, anomalous in plan:
        cell_types = _cell_layout(cfg, anomalous, rng)
        bundles = {}
        for tag in tags:
            patches = models[tag].tokens(cell_types, cfg, rng)
            global_vec = None
            if tag == OBJ_TAG:
                global_vec = cls_mix @ patches.mean(axis=0) \
                    + cfg.cls_noise * rng.normal(size=cfg.dims[OBJ_TAG])
            bundle = FeatureBundle(
                image_id=image_id, patches=patches, grid_h=cfg.grid, grid_w=cfg.grid,
                backbone_tag=tag, input_resolution=cfg.image_size, global_vec=global_vec)
            rel = f"bundles/{image_id}/{tag}"
            save_bundle(bundle, root / rel)
            bundles[tag] = rel

        mask_rel = None
        if anomalous:
            cells = (cell_types == 2).astype(np.uint8)
            mask = BinaryMask(np.kron(cells, np.ones((scale, scale), dtype=np.uint8)))
            mask_rel = f"masks/{image_id}.png"
            save_mask(mask, root / mask_rel)
        splits[split].append(ManifestEntry(image_id=image_id, bundles=bundles, mask=mask_rel))

    manifest = DatasetManifest(root=root, image_h=cfg.image_size, image_w=cfg.image_size,
                               train_normal=splits["train_normal"],
                               test_normal=splits["test_normal"],
                               test_anomalous=splits["test_anomalous"])
    save_dataset_manifest(manifest)
    return manifest
