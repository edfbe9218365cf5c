#!/usr/bin/env python3
"""Full pipeline runner: train-classifier -> invert -> analyze.

Runs the standard classifier for inversion, grids and t-SNE, then the
2-unit-penultimate variant for the decision-boundary map. Point it at a
directory holding the MNIST IDX files:

    python scripts/reproduce.py --data-dir /path/to/mnist --out runs/full
"""

import argparse
import sys
from pathlib import Path

from netinvert.cli import main as netinvert


def run(argv: list[str]) -> None:
    print(f"\n$ netinvert {' '.join(argv)}")
    code = netinvert(argv)
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", required=True,
                        help="directory with the four MNIST IDX files")
    parser.add_argument("--out", default="runs/full")
    parser.add_argument("--config", default=None, help="optional JSON config file")
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    out = Path(args.out)
    common = ["--data-dir", args.data_dir, "--seed", str(args.seed)]
    if args.config:
        common += ["--config", args.config]

    run(["train-classifier", *common, "--out", str(out)])
    run(["invert", *common, "--out", str(out)])
    run(["analyze", *common, "--out", str(out), "--which", "grid"])
    run(["analyze", *common, "--out", str(out), "--which", "tsne"])

    out_2d = out / "penultimate_2d"
    run(["train-classifier", *common, "--out", str(out_2d), "--penultimate-2d"])
    run(["analyze", *common, "--out", str(out_2d), "--which", "boundary"])

    print(f"\ndone; artifacts in {out} and {out_2d}")


if __name__ == "__main__":
    main()
