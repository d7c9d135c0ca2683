"""Frozen-backbone feature export for the complementary-cue detection engine."""

from .extract import extract_cnn, extract_vit, preprocess
from .specs import PRESETS, ExtractorSpec, get_spec

__all__ = ["ExtractorSpec", "PRESETS", "extract_cnn", "extract_vit", "get_spec",
           "preprocess"]

__version__ = "0.1.0"
