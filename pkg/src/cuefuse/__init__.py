"""Complementary-cue anomaly detection and pixel-level localization.

Three branches extract anomaly evidence from frozen-backbone features:
object composition (global-vector Gaussian + foreground/background
prototypes), semantic attribution (closed-form leave-one-out ablation of
the mean-pooled vector), and texture matching (coreset memory bank with
exact nearest-neighbor distances). Branch maps are fused by consensus
gating and the image scores by a weighted sum with peak compensation.
"""

from .feature_io import (BinaryMask, DatasetManifest, FeatureBundle, ManifestEntry,
                         MultiScaleFeatures, load_bundle, load_dataset_manifest,
                         load_mask, load_multiscale, save_bundle,
                         save_dataset_manifest, save_mask, save_multiscale)
from .gaussian import GaussianModel, fit_gaussian, mahalanobis, mahalanobis_batch
from .maps import AnomalyMap, bilinear_resize, gaussian_smooth, grid_to_map
from .fusion import (FusedResult, FusionConfig, calibrate_lambdas, fuse_image,
                     fuse_maps, fuse_pixel, minmax_normalize)
from .metrics import ProResult, RocResult, connected_components, pixel_roc_auc, pro_auc, roc_auc

__all__ = [
    "AnomalyMap", "BinaryMask", "DatasetManifest", "FeatureBundle", "FusedResult",
    "FusionConfig", "GaussianModel", "ManifestEntry", "MultiScaleFeatures",
    "ProResult", "RocResult", "bilinear_resize", "calibrate_lambdas",
    "connected_components", "fit_gaussian", "fuse_image", "fuse_maps", "fuse_pixel",
    "gaussian_smooth", "grid_to_map", "load_bundle", "load_dataset_manifest",
    "load_mask", "load_multiscale", "mahalanobis", "mahalanobis_batch",
    "minmax_normalize", "pixel_roc_auc", "pro_auc", "roc_auc", "save_bundle",
    "save_dataset_manifest", "save_mask", "save_multiscale",
]

__version__ = "0.1.0"
