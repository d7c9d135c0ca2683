"""Command-line orchestration: fit references, score a test set, evaluate, ablate.

Subcommands
    fit     build and persist the three branch models from normal bundles
    score   per-image branch maps + fused map + image scores -> run_report.json
    eval    metrics over a run report -> metrics_report.json
    ablate  score + eval for all seven map modes plus the image-score table

Configuration comes from a JSON file (--config) with CLI-flag overrides;
every report echoes the resolved configuration. Exit codes: 0 success,
1 config/validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import attribution, object_branch, texture
from .feature_io import (BinaryMask, DatasetManifest, bundle_kind, load_bundle,
                         load_dataset_manifest, load_mask, load_multiscale)
from .fusion import FusionConfig, calibrate_lambdas, fuse_image, fuse_maps
from .maps import AnomalyMap, bilinear_resize
from .metrics import pixel_roc_auc, pro_auc, roc_auc

DATA_ROOT_ENV = "CUEFUSE_DATA_ROOT"

PIXEL_MODES = ("obj", "attr", "pc", "obj*attr", "obj*pc", "attr*pc", "full")
IMAGE_SCORE_COLUMN = {
    "obj": "s_obj",
    "attr": "s_attr",
    "pc": "s_pc",
    "obj*attr": "s_map_peak",
    "obj*pc": "s_map_peak",
    "attr*pc": "s_map_peak",
    "full": "s_fused",
}


class ConfigError(ValueError):
    """Raised for configuration/validation problems (exit code 1)."""


def mode_participants(mode: str) -> tuple:
    if mode not in PIXEL_MODES:
        raise ConfigError(f"unknown mode {mode!r}, expected one of {PIXEL_MODES}")
    if mode == "full":
        return ("obj", "attr", "pc")
    return tuple(mode.split("*"))


@dataclass
class RunConfig:
    manifest: str
    out_dir: str
    obj_tag: str
    attr_tag: str
    pc_tag: str
    mode: str = "full"
    seed: int = 22
    tau: float = 1.14
    ratio_epsilon: float = 1e-8
    reg_scale: float = 1e-3
    token_subsample: float | None = None
    obj_sigma: float = 4.0
    attr_sigma: float = 4.0
    pc_sigma: float = 4.0
    coreset_fraction: float = 0.01
    projection_eps: float = 0.90
    n_neighbors: int = 3
    lambda_obj: float = 1.0
    lambda_m: float = 1.0
    norm_epsilon: float = 1e-8
    final_sigma: float = 4.0
    calibration_mode: str = "train_scale"
    data_root: str | None = None

    def __post_init__(self):
        mode_participants(self.mode)

    def resolve_manifest(self) -> DatasetManifest:
        root = self.data_root or os.environ.get(DATA_ROOT_ENV)
        path = Path(self.manifest)
        if not path.is_file():
            raise ConfigError(f"manifest not found: {path}")
        try:
            return load_dataset_manifest(path, root=root)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"invalid manifest {path}: {exc}") from exc

    def fusion_config(self, out_h: int, out_w: int) -> FusionConfig:
        return FusionConfig(out_h=out_h, out_w=out_w, lambda_obj=self.lambda_obj,
                            lambda_m=self.lambda_m, norm_epsilon=self.norm_epsilon,
                            final_sigma=self.final_sigma,
                            calibration_mode=self.calibration_mode)


def _config_echo(cfg: RunConfig) -> dict:
    return asdict(cfg)


def _write_json(doc: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _texture_features(manifest: DatasetManifest, entry, tag: str):
    """Patch features + grid for the texture branch, either bundle kind."""
    path = manifest.bundle_path(entry, tag)
    if bundle_kind(path) == "multiscale":
        ms = load_multiscale(path)
        return texture.build_patch_features(ms)
    bundle = load_bundle(path)
    return np.asarray(bundle.patches, dtype=np.float64), (bundle.grid_h, bundle.grid_w)


# -- fit -------------------------------------------------------------------


def cmd_fit(cfg: RunConfig) -> dict:
    manifest = cfg.resolve_manifest()
    if not manifest.train_normal:
        raise ConfigError("manifest has no train_normal entries")
    out = Path(cfg.out_dir)
    timings = {}
    counts = {"train_images": len(manifest.train_normal)}

    t0 = time.perf_counter()
    try:
        obj_bundles = [load_bundle(manifest.bundle_path(e, cfg.obj_tag))
                       for e in manifest.train_normal]
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigError(f"object branch: cannot load training bundles: {exc}") from exc
    obj_model = object_branch.fit_object_branch(
        obj_bundles, tau=cfg.tau, seed=cfg.seed, reg_scale=cfg.reg_scale,
        ratio_epsilon=cfg.ratio_epsilon, token_subsample=cfg.token_subsample)
    object_branch.save_object_branch(obj_model, out / "models" / "object", seed=cfg.seed)
    counts["obj_tokens"] = int(sum(b.n_patches for b in obj_bundles))
    timings["fit_object_s"] = time.perf_counter() - t0
    del obj_bundles

    t0 = time.perf_counter()
    try:
        attr_bundles = [load_bundle(manifest.bundle_path(e, cfg.attr_tag))
                        for e in manifest.train_normal]
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigError(f"attribution branch: cannot load training bundles: {exc}") from exc
    attr_model = attribution.fit_attribution(attr_bundles, reg_scale=cfg.reg_scale)
    attribution.save_attribution(attr_model, out / "models" / "attribution")
    timings["fit_attribution_s"] = time.perf_counter() - t0
    del attr_bundles

    t0 = time.perf_counter()
    feature_blocks = []
    layer_tags: tuple = ()
    for entry in manifest.train_normal:
        try:
            feats, _ = _texture_features(manifest, entry, cfg.pc_tag)
        except (KeyError, ValueError, OSError) as exc:
            raise ConfigError(f"texture branch: cannot load training features: {exc}") from exc
        feature_blocks.append(feats)
    pooled = np.concatenate(feature_blocks)
    del feature_blocks
    bank = texture.coreset_subsample(pooled, f=cfg.coreset_fraction,
                                     eps=cfg.projection_eps, seed=cfg.seed,
                                     layer_tags=layer_tags)
    texture.save_bank(bank, out / "models" / "texture")
    counts["pc_source_features"] = int(pooled.shape[0])
    counts["bank_entries"] = bank.size
    timings["fit_texture_s"] = time.perf_counter() - t0

    report = {"config": _config_echo(cfg), "counts": counts, "timings_s": timings}
    _write_json(report, out / "fit_report.json")
    return report


# -- score -----------------------------------------------------------------


def _branch_outputs(cfg: RunConfig, manifest: DatasetManifest, entry, models: dict,
                    participants: tuple, out_h: int, out_w: int):
    """Maps and scalar scores for the participating branches on one image."""
    maps_by_branch = {}
    scalars = {}
    if "obj" in participants:
        bundle = load_bundle(manifest.bundle_path(entry, cfg.obj_tag))
        maps_by_branch["obj"] = object_branch.localize(models["obj"], bundle,
                                                       out_h, out_w, sigma=cfg.obj_sigma)
        scalars["s_obj"] = object_branch.score_image(models["obj"], bundle)
    if "attr" in participants:
        bundle = load_bundle(manifest.bundle_path(entry, cfg.attr_tag))
        maps_by_branch["attr"] = attribution.localize(models["attr"], bundle,
                                                      out_h, out_w, sigma=cfg.attr_sigma)
        scalars["s_attr"] = attribution.score_image(models["attr"], bundle)
    if "pc" in participants:
        feats, grid = _texture_features(manifest, entry, cfg.pc_tag)
        maps_by_branch["pc"] = texture.localize(models["pc"], feats, grid,
                                                out_h, out_w, sigma=cfg.pc_sigma)
        scalars["s_pc"] = texture.image_score(models["pc"], feats, k=cfg.n_neighbors)
    return maps_by_branch, scalars


def _mode_map(maps_by_branch: dict, participants: tuple, fusion_cfg: FusionConfig) -> AnomalyMap:
    if len(participants) == 1:
        return maps_by_branch[participants[0]]
    return fuse_maps({k: maps_by_branch[k] for k in participants}, fusion_cfg)


def _load_models(cfg: RunConfig) -> dict:
    models_dir = Path(cfg.out_dir) / "models"
    try:
        return {
            "obj": object_branch.load_object_branch(models_dir / "object"),
            "attr": attribution.load_attribution(models_dir / "attribution"),
            "pc": texture.load_bank(models_dir / "texture"),
        }
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load fitted models from {models_dir}: {exc}") from exc


def cmd_score(cfg: RunConfig) -> dict:
    manifest = cfg.resolve_manifest()
    models = _load_models(cfg)
    participants = mode_participants(cfg.mode)
    out = Path(cfg.out_dir)
    out_h, out_w = manifest.image_h, manifest.image_w
    fusion_cfg = cfg.fusion_config(out_h, out_w)

    lambda_obj, lambda_m = cfg.lambda_obj, cfg.lambda_m
    if cfg.mode == "full" and cfg.calibration_mode == "train_scale":
        train_pc, train_obj, train_peaks = [], [], []
        for entry in manifest.train_normal:
            maps_by_branch, scalars = _branch_outputs(cfg, manifest, entry, models,
                                                      participants, out_h, out_w)
            fused = _mode_map(maps_by_branch, participants, fusion_cfg)
            train_pc.append(scalars["s_pc"])
            train_obj.append(scalars["s_obj"])
            train_peaks.append(float(fused.values.max()))
        lambda_obj, lambda_m = calibrate_lambdas(train_pc, train_obj, train_peaks, fusion_cfg)
        fusion_cfg = replace(fusion_cfg, lambda_obj=lambda_obj, lambda_m=lambda_m)

    rows = []
    maps_dir = out / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    test_entries = [(e, 0) for e in manifest.test_normal] + \
                   [(e, 1) for e in manifest.test_anomalous]
    for entry, label in test_entries:
        maps_by_branch, scalars = _branch_outputs(cfg, manifest, entry, models,
                                                  participants, out_h, out_w)
        mode_map = _mode_map(maps_by_branch, participants, fusion_cfg)
        rel_map = f"maps/{entry.image_id}.npy"
        np.save(out / rel_map, mode_map.values.astype(np.float32), allow_pickle=False)
        row = {"image_id": entry.image_id, "label": label, "map": rel_map,
               "s_map_peak": float(mode_map.values.max())}
        row.update({k: float(v) for k, v in scalars.items()})
        if cfg.mode == "full":
            result = fuse_image(scalars["s_pc"], scalars["s_obj"], mode_map, fusion_cfg)
            row["s_base"] = result.s_base
            row["s_fused"] = result.s_fused
        rows.append(row)

    report = {
        "config": _config_echo(cfg),
        "mode": cfg.mode,
        "lambda_obj": lambda_obj,
        "lambda_m": lambda_m,
        "rows": rows,
    }
    _write_json(report, out / "run_report.json")
    return report


# -- eval --------------------------------------------------------------------


def _load_run_report(path: Path) -> dict:
    if not path.is_file():
        raise ConfigError(f"run report not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def cmd_eval(cfg: RunConfig, report_path: Path | None = None,
             curves_csv: Path | None = None) -> dict:
    manifest = cfg.resolve_manifest()
    out = Path(cfg.out_dir)
    report = _load_run_report(report_path or out / "run_report.json")
    mode = report["mode"]
    score_column = IMAGE_SCORE_COLUMN[mode]

    labels = np.array([row["label"] for row in report["rows"]])
    scores = np.array([row[score_column] for row in report["rows"]])
    image_result = roc_auc(scores, labels)

    masks_by_id = {}
    for entry in manifest.test_anomalous:
        masks_by_id[entry.image_id] = load_mask(manifest.mask_path(entry),
                                                manifest.image_h, manifest.image_w)
    zero_mask = BinaryMask(np.zeros((manifest.image_h, manifest.image_w), dtype=np.uint8))

    eval_maps, eval_masks = [], []
    for row in report["rows"]:
        values = np.load(out / row["map"], allow_pickle=False).astype(np.float64)
        mask = masks_by_id.get(row["image_id"], zero_mask)
        if values.shape != mask.values.shape:
            values = bilinear_resize(values, *mask.values.shape)
        eval_maps.append(AnomalyMap(values, "fused" if "*" in mode or mode == "full" else mode))
        eval_masks.append(mask)

    pixel_result = pixel_roc_auc(eval_maps, eval_masks)
    pro_result = pro_auc(eval_maps, eval_masks)

    metrics_report = {
        "config": _config_echo(cfg),
        "mode": mode,
        "image_auc": image_result.auc,
        "pixel_auc": pixel_result.auc,
        "pro_auc": pro_result.pro_auc,
    }
    _write_json(metrics_report, out / "metrics_report.json")

    if curves_csv is not None:
        curves_csv = Path(curves_csv)
        curves_csv.parent.mkdir(parents=True, exist_ok=True)
        with open(curves_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["curve", "x", "y", "threshold"])
            for t, tpr, fpr in image_result.operating_points:
                writer.writerow(["image_roc", fpr, tpr, t])
            for fpr, pro in zip(pro_result.curve_fpr, pro_result.curve_pro):
                writer.writerow(["pro", fpr, pro, ""])
    return metrics_report


# -- ablate --------------------------------------------------------------------


def cmd_ablate(cfg: RunConfig) -> dict:
    """Score + eval every pixel mode, then tabulate the image-score variants."""
    base_out = Path(cfg.out_dir)
    pixel_table = {}
    full_report = None
    for mode in PIXEL_MODES:
        sub = replace(cfg, mode=mode, out_dir=str(base_out / "ablate" / mode.replace("*", "x")))
        Path(sub.out_dir).mkdir(parents=True, exist_ok=True)
        _link_models(base_out, Path(sub.out_dir))
        run_report = cmd_score(sub)
        metrics_report = cmd_eval(sub)
        pixel_table[mode] = {"pixel_auc": metrics_report["pixel_auc"],
                             "pro_auc": metrics_report["pro_auc"],
                             "image_auc": metrics_report["image_auc"]}
        if mode == "full":
            full_report = run_report

    lam_obj = full_report["lambda_obj"]
    lam_m = full_report["lambda_m"]
    rows = full_report["rows"]
    labels = np.array([r["label"] for r in rows])
    s_obj = np.array([r["s_obj"] for r in rows])
    s_pc = np.array([r["s_pc"] for r in rows])
    s_map = np.array([r["s_map_peak"] for r in rows])
    s_fused = np.array([r["s_fused"] for r in rows])
    image_variants = {
        "s_obj": s_obj,
        "s_pc": s_pc,
        "s_map": s_map,
        "s_obj+s_pc": s_pc + lam_obj * s_obj,
        "s_obj+s_map": lam_obj * s_obj + lam_m * s_map,
        "s_pc+s_map": s_pc + lam_m * s_map,
        "s_fused": s_fused,
    }
    image_table = {name: roc_auc(vals, labels).auc for name, vals in image_variants.items()}

    report = {"config": _config_echo(cfg), "pixel": pixel_table, "image": image_table,
              "lambda_obj": lam_obj, "lambda_m": lam_m}
    _write_json(report, base_out / "ablation_report.json")

    print(f"{'map mode':<12} {'Pixel-AUC':>10} {'PRO-AUC':>10} {'Image-AUC':>10}")
    for mode in PIXEL_MODES:
        row = pixel_table[mode]
        print(f"{mode:<12} {row['pixel_auc']:>10.4f} {row['pro_auc']:>10.4f} "
              f"{row['image_auc']:>10.4f}")
    print(f"\n{'image score':<14} {'Image-AUC':>10}")
    for name, auc_val in image_table.items():
        print(f"{name:<14} {auc_val:>10.4f}")
    return report


def _link_models(base_out: Path, sub_out: Path) -> None:
    src = base_out / "models"
    if not src.is_dir():
        raise ConfigError(f"no fitted models under {base_out}; run fit first")
    dst = sub_out / "models"
    if not dst.exists():
        try:
            dst.symlink_to(src.resolve(), target_is_directory=True)
        except OSError:
            shutil.copytree(src, dst)


# -- argument parsing ------------------------------------------------------------


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with RunConfig fields")
    parser.add_argument("--manifest", help="dataset.json path")
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--obj-tag", dest="obj_tag")
    parser.add_argument("--attr-tag", dest="attr_tag")
    parser.add_argument("--pc-tag", dest="pc_tag")
    parser.add_argument("--mode", choices=PIXEL_MODES)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--ratio-epsilon", dest="ratio_epsilon", type=float)
    parser.add_argument("--reg-scale", dest="reg_scale", type=float)
    parser.add_argument("--token-subsample", dest="token_subsample", type=float)
    parser.add_argument("--obj-sigma", dest="obj_sigma", type=float)
    parser.add_argument("--attr-sigma", dest="attr_sigma", type=float)
    parser.add_argument("--pc-sigma", dest="pc_sigma", type=float)
    parser.add_argument("--coreset-fraction", dest="coreset_fraction", type=float)
    parser.add_argument("--projection-eps", dest="projection_eps", type=float)
    parser.add_argument("--n-neighbors", dest="n_neighbors", type=int)
    parser.add_argument("--lambda-obj", dest="lambda_obj", type=float)
    parser.add_argument("--lambda-m", dest="lambda_m", type=float)
    parser.add_argument("--norm-epsilon", dest="norm_epsilon", type=float)
    parser.add_argument("--final-sigma", dest="final_sigma", type=float)
    parser.add_argument("--calibration-mode", dest="calibration_mode",
                        choices=("fixed", "train_scale"))
    parser.add_argument("--data-root", dest="data_root")


def build_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        config_path = Path(args.config)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            with open(config_path, encoding="utf-8") as fh:
                values.update(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in known:
        override = getattr(args, name, None)
        if override is not None:
            values[name] = override
    missing = [name for name in ("manifest", "out_dir", "obj_tag", "attr_tag", "pc_tag")
               if name not in values]
    if missing:
        raise ConfigError(f"missing required config fields: {missing}")
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cuefuse",
                                     description="Complementary-cue anomaly detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (("fit", "fit the three branch models"),
                       ("score", "score the test split"),
                       ("eval", "compute metrics over a run report"),
                       ("ablate", "run every fusion mode and tabulate")):
        p = sub.add_parser(name, help=desc)
        _add_common_flags(p)
        if name == "eval":
            p.add_argument("--run-report", dest="run_report",
                           help="run_report.json path (default: <out_dir>/run_report.json)")
            p.add_argument("--curves-csv", dest="curves_csv",
                           help="write ROC/PRO operating points as CSV")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        if args.command == "fit":
            cmd_fit(cfg)
        elif args.command == "score":
            cmd_score(cfg)
        elif args.command == "eval":
            report_path = Path(args.run_report) if args.run_report else None
            curves = Path(args.curves_csv) if args.curves_csv else None
            report = cmd_eval(cfg, report_path=report_path, curves_csv=curves)
            print(json.dumps({k: report[k] for k in ("image_auc", "pixel_auc", "pro_auc")},
                             indent=2, sort_keys=True))
        elif args.command == "ablate":
            cmd_ablate(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
