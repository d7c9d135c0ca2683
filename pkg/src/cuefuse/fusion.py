"""Consensus fusion of the three branch maps and the image-level scores.

Pixel level: the object and texture maps are min-max normalized into soft
[0, 1] gates, the attribution map keeps its raw magnitudes, and the three
are multiplied elementwise after resizing to a common resolution. Image
level: s_fused = s_pc + lambda_obj * s_obj + lambda_m * max(fused map).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .maps import AnomalyMap, bilinear_resize, gaussian_smooth

CALIBRATION_MODES = ("fixed", "train_scale")


@dataclass
class FusionConfig:
    out_h: int
    out_w: int
    lambda_obj: float = 1.0
    lambda_m: float = 1.0
    norm_epsilon: float = 1e-8
    final_sigma: float = 4.0
    calibration_mode: str = "train_scale"

    def __post_init__(self):
        if self.out_h < 1 or self.out_w < 1:
            raise ValueError("output dimensions must be positive")
        if self.norm_epsilon <= 0:
            raise ValueError("norm_epsilon must be positive")
        if self.lambda_obj < 0 or self.lambda_m < 0:
            raise ValueError("fusion weights must be nonnegative")
        if self.calibration_mode not in CALIBRATION_MODES:
            raise ValueError(f"calibration_mode must be one of {CALIBRATION_MODES}")


@dataclass(frozen=True)
class FusedResult:
    map: AnomalyMap
    s_obj: float
    s_pc: float
    s_map_peak: float
    s_base: float
    s_fused: float


def minmax_normalize(amap: AnomalyMap, eps: float = 1e-8) -> AnomalyMap:
    """(M - min) / (max - min + eps); a constant map becomes all zeros."""
    v = amap.values
    normed = (v - v.min()) / (v.max() - v.min() + eps)
    return AnomalyMap(normed, amap.provenance, normalized=True)


def fuse_maps(maps: dict, cfg: FusionConfig) -> AnomalyMap:
    """Hadamard consensus over any subset of {"obj", "attr", "pc"} maps.

    obj and pc act as normalized soft gates; attr contributes its raw
    response magnitudes. All participants are bilinearly resized to the
    configured resolution before the product, and the result is smoothed.
    """
    if not maps:
        raise ValueError("at least one map is required")
    unknown = set(maps) - {"obj", "attr", "pc"}
    if unknown:
        raise ValueError(f"unknown fusion inputs: {sorted(unknown)}")
    product = None
    for key in ("obj", "attr", "pc"):
        if key not in maps:
            continue
        amap = maps[key]
        if key in ("obj", "pc"):
            amap = minmax_normalize(amap, cfg.norm_epsilon)
        resized = bilinear_resize(amap.values, cfg.out_h, cfg.out_w)
        product = resized if product is None else product * resized
    return AnomalyMap(gaussian_smooth(product, cfg.final_sigma), "fused")


def fuse_pixel(m_obj: AnomalyMap, m_attr: AnomalyMap, m_pc: AnomalyMap,
               cfg: FusionConfig) -> AnomalyMap:
    """Full three-branch consensus map."""
    return fuse_maps({"obj": m_obj, "attr": m_attr, "pc": m_pc}, cfg)


def fuse_image(s_pc: float, s_obj: float, m_fused: AnomalyMap, cfg: FusionConfig) -> FusedResult:
    """Weighted image score with peak compensation from the fused map."""
    if not (np.isfinite(s_pc) and np.isfinite(s_obj)):
        raise ValueError("image scores must be finite")
    peak = float(m_fused.values.max())
    s_base = s_pc + cfg.lambda_obj * s_obj
    s_fused = s_base + cfg.lambda_m * peak
    return FusedResult(map=m_fused, s_obj=float(s_obj), s_pc=float(s_pc),
                       s_map_peak=peak, s_base=float(s_base), s_fused=float(s_fused))


def calibrate_lambdas(train_scores_pc, train_scores_obj, train_peaks,
                      cfg: FusionConfig) -> tuple[float, float]:
    """Scale weights from training-normal medians (train_scale mode).

    lambda_obj matches the median object score to the median texture score;
    lambda_m matches the median fused-map peak to the median base score.
    Zero denominators fall back to 1.0. Fixed mode echoes the configured
    constants.
    """
    if cfg.calibration_mode == "fixed":
        return cfg.lambda_obj, cfg.lambda_m
    s_pc = np.asarray(list(train_scores_pc), dtype=np.float64)
    s_obj = np.asarray(list(train_scores_obj), dtype=np.float64)
    peaks = np.asarray(list(train_peaks), dtype=np.float64)
    if s_pc.size == 0 or s_obj.size == 0 or peaks.size == 0:
        raise ValueError("calibration needs nonempty training score lists")
    med_obj = np.median(s_obj)
    lambda_obj = float(np.median(s_pc) / med_obj) if med_obj != 0 else 1.0
    med_peak = np.median(peaks)
    s_base = s_pc + lambda_obj * s_obj
    lambda_m = float(np.median(s_base) / med_peak) if med_peak != 0 else 1.0
    return lambda_obj, lambda_m


def with_calibration(cfg: FusionConfig, lambda_obj: float, lambda_m: float) -> FusionConfig:
    return replace(cfg, lambda_obj=lambda_obj, lambda_m=lambda_m)
