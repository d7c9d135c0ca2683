"""On-disk feature bundles, dataset manifests, and binary mask loading.

Tensor payloads are NPY v1.0 little-endian float32. A bundle is a directory
with a plain-text ``manifest.txt`` (key=value lines) next to the arrays, so
any language can produce or consume it without a deep-learning runtime.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

FLOAT32_LE = np.dtype("<f4")


@dataclass(frozen=True)
class FeatureBundle:
    """Per-image feature record: optional global vector plus a patch-token grid.

    ``patches`` is (N, D) with row i the token at grid position
    (i // grid_w, i % grid_w), i.e. row-major over the grid.
    """

    image_id: str
    patches: np.ndarray
    grid_h: int
    grid_w: int
    backbone_tag: str
    input_resolution: int
    global_vec: np.ndarray | None = None

    def __post_init__(self):
        patches = np.ascontiguousarray(self.patches, dtype=FLOAT32_LE)
        if patches.ndim != 2:
            raise ValueError(f"patches must be 2-D, got shape {patches.shape}")
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValueError("grid dimensions must be positive")
        if self.grid_h * self.grid_w != patches.shape[0]:
            raise ValueError(
                f"grid {self.grid_h}x{self.grid_w} does not match {patches.shape[0]} patch rows")
        if self.input_resolution < 1:
            raise ValueError("input_resolution must be positive")
        if not np.all(np.isfinite(patches)):
            raise ValueError("patches contain non-finite values")
        object.__setattr__(self, "patches", patches)
        if self.global_vec is not None:
            g = np.ascontiguousarray(self.global_vec, dtype=FLOAT32_LE)
            if g.ndim != 1 or g.shape[0] != patches.shape[1]:
                raise ValueError(
                    f"global_vec shape {g.shape} inconsistent with patch dim {patches.shape[1]}")
            if not np.all(np.isfinite(g)):
                raise ValueError("global_vec contains non-finite values")
            object.__setattr__(self, "global_vec", g)

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]

    @property
    def dim(self) -> int:
        return self.patches.shape[1]


@dataclass(frozen=True)
class MultiScaleFeatures:
    """Stacked intermediate CNN feature grids for one image, one (h, w, c) per layer."""

    image_id: str
    layers: tuple
    layer_tags: tuple
    backbone_tag: str
    input_resolution: int

    def __post_init__(self):
        if len(self.layers) == 0:
            raise ValueError("at least one layer grid is required")
        if len(self.layers) != len(self.layer_tags):
            raise ValueError("layer_tags must match layers one-to-one")
        clean = []
        for tag, grid in zip(self.layer_tags, self.layers):
            grid = np.ascontiguousarray(grid, dtype=FLOAT32_LE)
            if grid.ndim != 3 or grid.size == 0:
                raise ValueError(f"layer {tag!r} must be a non-empty (h, w, c) grid")
            if not np.all(np.isfinite(grid)):
                raise ValueError(f"layer {tag!r} contains non-finite values")
            clean.append(grid)
        object.__setattr__(self, "layers", tuple(clean))
        object.__setattr__(self, "layer_tags", tuple(str(t) for t in self.layer_tags))


@dataclass(frozen=True)
class BinaryMask:
    """Pixel-level ground truth; 1 marks a foreign-object pixel."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.size == 0:
            raise ValueError(f"mask must be a non-empty 2-D array, got shape {values.shape}")
        values = values.astype(np.uint8)
        if not np.isin(values, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    bundles: dict  # backbone_tag -> path relative to the manifest directory
    mask: str | None = None


@dataclass
class DatasetManifest:
    """Split listing for one dataset root; all paths relative to ``root``."""

    root: Path
    image_h: int
    image_w: int
    train_normal: list = field(default_factory=list)
    test_normal: list = field(default_factory=list)
    test_anomalous: list = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        if self.image_h < 1 or self.image_w < 1:
            raise ValueError("image resolution must be positive")
        seen = {}
        for split_name in ("train_normal", "test_normal", "test_anomalous"):
            for entry in getattr(self, split_name):
                if entry.image_id in seen:
                    raise ValueError(
                        f"image_id {entry.image_id!r} appears in both "
                        f"{seen[entry.image_id]} and {split_name}")
                seen[entry.image_id] = split_name
        for entry in self.train_normal:
            if entry.mask is not None:
                raise ValueError(f"train_normal entry {entry.image_id!r} must not carry a mask")
        for entry in self.test_anomalous:
            if entry.mask is None:
                raise ValueError(f"test_anomalous entry {entry.image_id!r} is missing a mask path")

    def bundle_path(self, entry: ManifestEntry, backbone_tag: str) -> Path:
        try:
            rel = entry.bundles[backbone_tag]
        except KeyError:
            raise KeyError(
                f"entry {entry.image_id!r} has no bundle for backbone {backbone_tag!r}") from None
        return self.root / rel

    def mask_path(self, entry: ManifestEntry) -> Path:
        if entry.mask is None:
            raise ValueError(f"entry {entry.image_id!r} has no mask")
        return self.root / entry.mask


# -- bundle directories -------------------------------------------------


def _write_kv(path: Path, pairs: dict) -> None:
    lines = [f"{k}={v}" for k, v in pairs.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_kv(path: Path) -> dict:
    pairs = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: malformed line {lineno}: {line!r}")
        key, value = line.split("=", 1)
        pairs[key] = value
    return pairs


def _save_npy(array: np.ndarray, path: Path) -> None:
    np.save(path, np.ascontiguousarray(array, dtype=FLOAT32_LE), allow_pickle=False)


def _load_npy(path: Path) -> np.ndarray:
    try:
        arr = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise ValueError(f"failed to read array {path}: {exc}") from exc
    return arr


def save_bundle(bundle: FeatureBundle, path: str | os.PathLike) -> None:
    """Write a bundle directory (manifest.txt, patches.npy, optional global.npy)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write_kv(path / "manifest.txt", {
        "image_id": bundle.image_id,
        "backbone_tag": bundle.backbone_tag,
        "grid_h": bundle.grid_h,
        "grid_w": bundle.grid_w,
        "dim": bundle.dim,
        "input_resolution": bundle.input_resolution,
        "has_global": int(bundle.global_vec is not None),
    })
    _save_npy(bundle.patches, path / "patches.npy")
    if bundle.global_vec is not None:
        _save_npy(bundle.global_vec, path / "global.npy")


def load_bundle(path: str | os.PathLike) -> FeatureBundle:
    """Load and re-validate a bundle directory written by :func:`save_bundle`."""
    path = Path(path)
    meta = _read_kv(path / "manifest.txt")
    patches = _load_npy(path / "patches.npy")
    grid_h, grid_w = int(meta["grid_h"]), int(meta["grid_w"])
    if patches.ndim != 2 or patches.shape[0] != grid_h * grid_w:
        raise ValueError(
            f"{path}: patches shape {patches.shape} does not match grid {grid_h}x{grid_w}")
    if int(meta.get("dim", patches.shape[1])) != patches.shape[1]:
        raise ValueError(f"{path}: recorded dim {meta['dim']} != array dim {patches.shape[1]}")
    global_vec = None
    if int(meta.get("has_global", 0)):
        global_vec = _load_npy(path / "global.npy")
    return FeatureBundle(
        image_id=meta["image_id"],
        patches=patches,
        grid_h=grid_h,
        grid_w=grid_w,
        backbone_tag=meta["backbone_tag"],
        input_resolution=int(meta["input_resolution"]),
        global_vec=global_vec,
    )


def save_multiscale(ms: MultiScaleFeatures, path: str | os.PathLike) -> None:
    """Write a multi-scale CNN feature directory (one levelN.npy per layer)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write_kv(path / "manifest.txt", {
        "image_id": ms.image_id,
        "backbone_tag": ms.backbone_tag,
        "input_resolution": ms.input_resolution,
        "kind": "multiscale",
        "layer_tags": ",".join(ms.layer_tags),
    })
    for i, grid in enumerate(ms.layers):
        _save_npy(grid, path / f"level{i}.npy")


def load_multiscale(path: str | os.PathLike) -> MultiScaleFeatures:
    path = Path(path)
    meta = _read_kv(path / "manifest.txt")
    if meta.get("kind") != "multiscale":
        raise ValueError(f"{path}: not a multiscale feature directory")
    tags = meta["layer_tags"].split(",")
    layers = [_load_npy(path / f"level{i}.npy") for i in range(len(tags))]
    return MultiScaleFeatures(
        image_id=meta["image_id"],
        layers=tuple(layers),
        layer_tags=tuple(tags),
        backbone_tag=meta["backbone_tag"],
        input_resolution=int(meta["input_resolution"]),
    )


def bundle_kind(path: str | os.PathLike) -> str:
    """Return 'tokens' or 'multiscale' for a feature directory on disk."""
    meta = _read_kv(Path(path) / "manifest.txt")
    return meta.get("kind", "tokens")


# -- dataset manifest ----------------------------------------------------


def _entry_to_json(entry: ManifestEntry) -> dict:
    rec = {"image_id": entry.image_id, "bundles": dict(entry.bundles)}
    if entry.mask is not None:
        rec["mask"] = entry.mask
    return rec


def _entry_from_json(rec: dict) -> ManifestEntry:
    return ManifestEntry(
        image_id=rec["image_id"],
        bundles=dict(rec["bundles"]),
        mask=rec.get("mask"),
    )


def save_dataset_manifest(manifest: DatasetManifest, path: str | os.PathLike | None = None) -> Path:
    """Write dataset.json at the dataset root (or at an explicit path)."""
    path = Path(path) if path is not None else manifest.root / "dataset.json"
    doc = {
        "image_h": manifest.image_h,
        "image_w": manifest.image_w,
        "splits": {
            "train_normal": [_entry_to_json(e) for e in manifest.train_normal],
            "test_normal": [_entry_to_json(e) for e in manifest.test_normal],
            "test_anomalous": [_entry_to_json(e) for e in manifest.test_anomalous],
        },
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_dataset_manifest(path: str | os.PathLike, root: str | os.PathLike | None = None) -> DatasetManifest:
    """Load dataset.json; ``root`` overrides the manifest's directory as dataset root."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    splits = doc["splits"]
    return DatasetManifest(
        root=Path(root) if root is not None else path.parent,
        image_h=int(doc["image_h"]),
        image_w=int(doc["image_w"]),
        train_normal=[_entry_from_json(r) for r in splits.get("train_normal", [])],
        test_normal=[_entry_from_json(r) for r in splits.get("test_normal", [])],
        test_anomalous=[_entry_from_json(r) for r in splits.get("test_anomalous", [])],
    )


# -- masks ---------------------------------------------------------------


def _nearest_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = values.shape
    rows = np.clip(np.floor((np.arange(out_h) + 0.5) * (in_h / out_h)), 0, in_h - 1).astype(np.intp)
    cols = np.clip(np.floor((np.arange(out_w) + 0.5) * (in_w / out_w)), 0, in_w - 1).astype(np.intp)
    return values[rows[:, None], cols[None, :]]


def load_mask(path: str | os.PathLike, target_h: int, target_w: int) -> BinaryMask:
    """Load an 8-bit grayscale PNG mask; >0 means anomalous.

    If the native size differs from the target, the raw grayscale image is
    nearest-neighbor resized first and binarized after.
    """
    if target_h < 1 or target_w < 1:
        raise ValueError("target mask dimensions must be positive")
    try:
        with Image.open(path) as img:
            values = np.asarray(img.convert("L"))
    except Exception as exc:
        raise ValueError(f"failed to read mask {path}: {exc}") from exc
    if values.size == 0:
        raise ValueError(f"mask {path} is zero-sized")
    if values.shape != (target_h, target_w):
        values = _nearest_resize(values, target_h, target_w)
    return BinaryMask((values > 0).astype(np.uint8))


def save_mask(mask: BinaryMask, path: str | os.PathLike) -> None:
    """Write a mask as an 8-bit grayscale PNG with values {0, 255}."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((mask.values * 255).astype(np.uint8), mode="L").save(path, format="PNG")
