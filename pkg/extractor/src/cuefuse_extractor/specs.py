"""Extractor specifications: which backbone, resolution, and output tag."""

from __future__ import annotations

from dataclasses import dataclass, field

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class ExtractorSpec:
    name: str
    kind: str  # "vit" or "cnn"
    backbone: str
    input_resolution: int
    backbone_tag: str
    normalization_mean: tuple = IMAGENET_MEAN
    normalization_std: tuple = IMAGENET_STD
    patch_size: int = 14
    tap_layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("vit", "cnn"):
            raise ValueError(f"unknown extractor kind {self.kind!r}")
        if self.input_resolution < 1:
            raise ValueError("input_resolution must be positive")
        if self.kind == "vit" and self.input_resolution % self.patch_size != 0:
            raise ValueError(
                f"resolution {self.input_resolution} is not divisible by "
                f"patch size {self.patch_size}")
        if self.kind == "cnn" and not self.tap_layers:
            raise ValueError("cnn specs need at least one tap layer")

    @property
    def grid_side(self) -> int:
        if self.kind != "vit":
            raise ValueError("grid_side is defined for vit specs only")
        return self.input_resolution // self.patch_size


PRESETS = {
    "vit-s-350": ExtractorSpec(
        name="vit-s-350", kind="vit", backbone="facebook/dinov2-small",
        input_resolution=350, backbone_tag="dinov2-vits14-350"),
    "vit-b-406": ExtractorSpec(
        name="vit-b-406", kind="vit", backbone="facebook/dinov2-base",
        input_resolution=406, backbone_tag="dinov2-vitb14-406"),
    "wrn50-238": ExtractorSpec(
        name="wrn50-238", kind="cnn", backbone="wide_resnet50_2",
        input_resolution=238, backbone_tag="wrn50_2-s2s3-238",
        tap_layers=("layer2", "layer3")),
}


def get_spec(name: str) -> ExtractorSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown spec {name!r}, expected one of {sorted(PRESETS)}") from None
