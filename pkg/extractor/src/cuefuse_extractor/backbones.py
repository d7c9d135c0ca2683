"""Frozen backbone construction. Pretrained weights by default; random
weights are available for offline smoke tests (shapes and formats only).
"""

from __future__ import annotations

import torch

from .specs import ExtractorSpec

VIT_CONFIGS = {
    "facebook/dinov2-small": dict(hidden_size=384, num_hidden_layers=12,
                                  num_attention_heads=6, intermediate_size=1536),
    "facebook/dinov2-base": dict(hidden_size=768, num_hidden_layers=12,
                                 num_attention_heads=12, intermediate_size=3072),
}


def build_vit(spec: ExtractorSpec, untrained: bool = False, config_overrides: dict | None = None):
    from transformers import Dinov2Config, Dinov2Model

    if untrained:
        params = dict(VIT_CONFIGS.get(spec.backbone, VIT_CONFIGS["facebook/dinov2-small"]))
        if config_overrides:
            params.update(config_overrides)
        config = Dinov2Config(patch_size=spec.patch_size,
                              image_size=spec.input_resolution, **params)
        torch.manual_seed(0)
        model = Dinov2Model(config)
    else:
        model = Dinov2Model.from_pretrained(spec.backbone)
        if model.config.patch_size != spec.patch_size:
            raise ValueError(
                f"checkpoint patch size {model.config.patch_size} != spec {spec.patch_size}")
    return model.eval()


def build_cnn(spec: ExtractorSpec, untrained: bool = False):
    import torchvision.models as tvm
    from torchvision.models.feature_extraction import create_feature_extractor

    factory = getattr(tvm, spec.backbone, None)
    if factory is None:
        raise ValueError(f"unknown torchvision backbone {spec.backbone!r}")
    weights = None if untrained else "DEFAULT"
    model = factory(weights=weights).eval()
    missing = [l for l in spec.tap_layers if not hasattr(model, l)]
    if missing:
        raise ValueError(f"backbone {spec.backbone} has no layers {missing}")
    return create_feature_extractor(model, return_nodes={l: l for l in spec.tap_layers})
