#!/usr/bin/env python3
"""Write a synthetic feature dataset (bundles + masks + dataset.json) to disk."""

import argparse

from cuefuse.synthetic import SyntheticConfig, generate_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("root", help="output dataset root")
    parser.add_argument("--n-train", type=int, default=200)
    parser.add_argument("--n-test-normal", type=int, default=100)
    parser.add_argument("--n-test-anomalous", type=int, default=100)
    parser.add_argument("--grid", type=int, default=16)
    parser.add_argument("--image-size", type=int, default=64)
    parser.add_argument("--anomaly-shift", type=float, default=6.0)
    parser.add_argument("--seed", type=int, default=22)
    args = parser.parse_args()

    cfg = SyntheticConfig(
        n_train=args.n_train, n_test_normal=args.n_test_normal,
        n_test_anomalous=args.n_test_anomalous, grid=args.grid,
        image_size=args.image_size, anomaly_shift=args.anomaly_shift, seed=args.seed)
    manifest = generate_dataset(cfg, args.root)
    n = len(manifest.train_normal) + len(manifest.test_normal) + len(manifest.test_anomalous)
    print(f"wrote {n} images under {args.root} (manifest: {args.root}/dataset.json)")


if __name__ == "__main__":
    main()
