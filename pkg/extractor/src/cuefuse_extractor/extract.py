"""Batch feature extraction: images in, feature directories out.

The extractor is a pure feature faucet; it computes no anomaly logic. All
outputs follow the documented bundle formats so the detection engine (or
anything else) can consume them without sharing code.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .specs import ExtractorSpec
from .writers import write_multiscale, write_token_bundle


def preprocess(image_path: Path, spec: ExtractorSpec) -> torch.Tensor:
    """Decode, bilinearly resize to the spec resolution, and normalize."""
    try:
        with Image.open(image_path) as img:
            img = img.convert("RGB").resize(
                (spec.input_resolution, spec.input_resolution), Image.BILINEAR)
    except Exception as exc:
        raise ValueError(f"cannot decode image {image_path}: {exc}") from exc
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(spec.normalization_mean, dtype=np.float32)) \
        / np.asarray(spec.normalization_std, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1))


def _batches(items, size):
    for lo in range(0, len(items), size):
        yield items[lo:lo + size]


@torch.no_grad()
def extract_vit(image_paths, spec: ExtractorSpec, out_root: Path, model,
                device: str = "cpu", batch_size: int = 4):
    """One token bundle per image: global.npy = CLS token, patches.npy = grid tokens.

    Tokens come out in row-major grid order (the ViT patch embedding flattens
    height-major), N = (resolution / patch_size)^2. Returns (image_id,
    bundle_dir) pairs in input order.
    """
    if spec.kind != "vit":
        raise ValueError(f"spec {spec.name} is not a vit spec")
    model = model.to(device)
    side = spec.grid_side
    written = []
    paths = [Path(p) for p in image_paths]
    for chunk in _batches(paths, batch_size):
        batch = torch.stack([preprocess(p, spec) for p in chunk]).to(device)
        tokens = model(batch).last_hidden_state.cpu().numpy()
        expected = 1 + side * side
        if tokens.shape[1] != expected:
            raise ValueError(
                f"backbone returned {tokens.shape[1]} tokens, expected {expected} "
                f"(CLS + {side}x{side} grid)")
        for path, seq in zip(chunk, tokens):
            image_id = path.stem
            bundle_dir = out_root / "bundles" / image_id / spec.backbone_tag
            write_token_bundle(bundle_dir, image_id=image_id,
                               backbone_tag=spec.backbone_tag,
                               input_resolution=spec.input_resolution,
                               patches=seq[1:], global_vec=seq[0], grid=(side, side))
            written.append((image_id, bundle_dir))
    return written


@torch.no_grad()
def extract_cnn(image_paths, spec: ExtractorSpec, out_root: Path, model,
                device: str = "cpu", batch_size: int = 4):
    """One multi-scale record per image holding the tapped stage grids (h, w, c)."""
    if spec.kind != "cnn":
        raise ValueError(f"spec {spec.name} is not a cnn spec")
    model = model.to(device)
    written = []
    paths = [Path(p) for p in image_paths]
    for chunk in _batches(paths, batch_size):
        batch = torch.stack([preprocess(p, spec) for p in chunk]).to(device)
        feats = model(batch)
        per_layer = [feats[l].permute(0, 2, 3, 1).cpu().numpy() for l in spec.tap_layers]
        for i, path in enumerate(chunk):
            image_id = path.stem
            bundle_dir = out_root / "bundles" / image_id / spec.backbone_tag
            write_multiscale(bundle_dir, image_id=image_id,
                             backbone_tag=spec.backbone_tag,
                             input_resolution=spec.input_resolution,
                             layers=[layer[i] for layer in per_layer],
                             layer_tags=list(spec.tap_layers))
            written.append((image_id, bundle_dir))
    return written
