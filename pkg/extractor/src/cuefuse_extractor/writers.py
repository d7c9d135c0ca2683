"""Writers for the on-disk feature contract shared with the detection engine.

A token bundle is a directory holding manifest.txt (key=value lines),
patches.npy (N x D float32 little-endian), and optionally global.npy. A
multi-scale CNN record adds kind=multiscale and one levelN.npy per tapped
layer. Directories are written to a temp path and renamed into place, so a
partially extracted dataset never exposes a half-written record.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

FLOAT32_LE = np.dtype("<f4")


def _write_kv(path: Path, pairs: dict) -> None:
    path.write_text("".join(f"{k}={v}\n" for k, v in pairs.items()), encoding="utf-8")


def _atomic_dir(target: Path):
    target.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{target.name}.tmp-", dir=target.parent))


def _commit_dir(tmp: Path, target: Path) -> None:
    if target.exists():
        shutil.rmtree(target)
    os.replace(tmp, target)


def write_token_bundle(path: Path, image_id: str, backbone_tag: str,
                       input_resolution: int, patches: np.ndarray,
                       global_vec: np.ndarray | None, grid: tuple[int, int]) -> None:
    patches = np.ascontiguousarray(patches, dtype=FLOAT32_LE)
    if not np.all(np.isfinite(patches)):
        raise ValueError(f"{image_id}: non-finite patch features")
    if grid[0] * grid[1] != patches.shape[0]:
        raise ValueError(f"{image_id}: grid {grid} does not match {patches.shape[0]} tokens")
    tmp = _atomic_dir(path)
    try:
        _write_kv(tmp / "manifest.txt", {
            "image_id": image_id,
            "backbone_tag": backbone_tag,
            "grid_h": grid[0],
            "grid_w": grid[1],
            "dim": patches.shape[1],
            "input_resolution": input_resolution,
            "has_global": int(global_vec is not None),
        })
        np.save(tmp / "patches.npy", patches, allow_pickle=False)
        if global_vec is not None:
            g = np.ascontiguousarray(global_vec, dtype=FLOAT32_LE)
            if not np.all(np.isfinite(g)):
                raise ValueError(f"{image_id}: non-finite global vector")
            np.save(tmp / "global.npy", g, allow_pickle=False)
        _commit_dir(tmp, path)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)


def write_multiscale(path: Path, image_id: str, backbone_tag: str,
                     input_resolution: int, layers: list, layer_tags: list) -> None:
    tmp = _atomic_dir(path)
    try:
        _write_kv(tmp / "manifest.txt", {
            "image_id": image_id,
            "backbone_tag": backbone_tag,
            "input_resolution": input_resolution,
            "kind": "multiscale",
            "layer_tags": ",".join(layer_tags),
        })
        for i, grid in enumerate(layers):
            grid = np.ascontiguousarray(grid, dtype=FLOAT32_LE)
            if not np.all(np.isfinite(grid)):
                raise ValueError(f"{image_id}: non-finite features in layer {layer_tags[i]}")
            np.save(tmp / f"level{i}.npy", grid, allow_pickle=False)
        _commit_dir(tmp, path)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)


# -- dataset.json maintenance -------------------------------------------------


def load_or_init_manifest(path: Path, image_h: int, image_w: int) -> dict:
    if path.is_file():
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    return {"image_h": image_h, "image_w": image_w,
            "splits": {"train_normal": [], "test_normal": [], "test_anomalous": []}}


def upsert_entry(manifest: dict, split: str, image_id: str, backbone_tag: str,
                 bundle_rel: str, mask_rel: str | None = None) -> None:
    entries = manifest["splits"].setdefault(split, [])
    for entry in entries:
        if entry["image_id"] == image_id:
            entry["bundles"][backbone_tag] = bundle_rel
            if mask_rel is not None:
                entry["mask"] = mask_rel
            return
    record = {"image_id": image_id, "bundles": {backbone_tag: bundle_rel}}
    if mask_rel is not None:
        record["mask"] = mask_rel
    entries.append(record)


def save_manifest(manifest: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
