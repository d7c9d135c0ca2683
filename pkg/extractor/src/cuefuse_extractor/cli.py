"""Command-line feature extraction.

Example:
    cuefuse-extract --images ./frames --spec vit-s-350 --out ./dataset \\
        --split train_normal --image-size 512

Each run writes bundle directories under <out>/bundles/<image_id>/<tag> and
updates <out>/dataset.json, merging with whatever other specs already wrote.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backbones import build_cnn, build_vit
from .extract import extract_cnn, extract_vit
from .specs import PRESETS, get_spec
from .writers import load_or_init_manifest, save_manifest, upsert_entry

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
SPLITS = ("train_normal", "test_normal", "test_anomalous")


def collect_images(images_dir: Path):
    paths = sorted(p for p in images_dir.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise ValueError(f"no images under {images_dir}")
    return paths


def run(args) -> None:
    spec = get_spec(args.spec)
    images = collect_images(Path(args.images))
    out_root = Path(args.out)

    if spec.kind == "vit":
        model = build_vit(spec, untrained=args.untrained)
        written = extract_vit(images, spec, out_root, model,
                              device=args.device, batch_size=args.batch_size)
    else:
        model = build_cnn(spec, untrained=args.untrained)
        written = extract_cnn(images, spec, out_root, model,
                              device=args.device, batch_size=args.batch_size)

    manifest = load_or_init_manifest(out_root / "dataset.json",
                                     image_h=args.image_size, image_w=args.image_size)
    mask_dir = Path(args.mask_dir) if args.mask_dir else None
    for image_id, bundle_dir in written:
        mask_rel = None
        if mask_dir is not None:
            mask_path = mask_dir / f"{image_id}.png"
            if not mask_path.is_file():
                raise ValueError(f"missing mask for {image_id}: {mask_path}")
            mask_rel = str(mask_path.resolve().relative_to(out_root.resolve())) \
                if mask_path.resolve().is_relative_to(out_root.resolve()) \
                else str(mask_path.resolve())
        upsert_entry(manifest, args.split, image_id, spec.backbone_tag,
                     str(bundle_dir.relative_to(out_root)), mask_rel)
    save_manifest(manifest, out_root / "dataset.json")
    print(f"extracted {len(written)} images with {spec.name} -> {out_root}")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cuefuse-extract", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--images", required=True, help="directory of input images")
    parser.add_argument("--spec", required=True, choices=sorted(PRESETS),
                        help="extractor preset")
    parser.add_argument("--out", required=True, help="dataset root to write into")
    parser.add_argument("--split", default="train_normal", choices=SPLITS)
    parser.add_argument("--mask-dir", help="per-image PNG masks (test_anomalous split)")
    parser.add_argument("--image-size", type=int, default=512,
                        help="native image resolution recorded in dataset.json")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=4)
    parser.add_argument("--untrained", action="store_true",
                        help="random weights (offline smoke tests only)")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        run(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
