#!/usr/bin/env python3
"""End-to-end demo on procedural seven-segment digits, for machines without MNIST.

Writes a small synthetic dataset in IDX format and drives the real CLI
through every stage at a reduced training budget. Expect a few minutes on a
laptop CPU. The numbers this prints demonstrate the machinery, not the
full-dataset accuracy figures.
"""

import argparse
import sys
from pathlib import Path

from netinvert.cli import main as netinvert
from netinvert.synth import make_synthetic_dataset, write_idx


def run(argv: list[str]) -> None:
    print(f"\n$ netinvert {' '.join(argv)}")
    code = netinvert(argv)
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/demo")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--train-per-class", type=int, default=400)
    parser.add_argument("--test-per-class", type=int, default=100)
    parser.add_argument("--classifier-epochs", type=int, default=2)
    parser.add_argument("--invert-epochs", type=int, default=12)
    args = parser.parse_args()

    out = Path(args.out)
    data_dir = out / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    write_idx(make_synthetic_dataset(args.train_per_class, seed=args.seed),
              data_dir / "train-images-idx3-ubyte", data_dir / "train-labels-idx1-ubyte")
    write_idx(make_synthetic_dataset(args.test_per_class, seed=args.seed + 1),
              data_dir / "t10k-images-idx3-ubyte", data_dir / "t10k-labels-idx1-ubyte")
    print(f"wrote synthetic IDX files to {data_dir}")

    common = ["--data-dir", str(data_dir), "--seed", str(args.seed)]
    run(["train-classifier", *common, "--out", str(out),
         "--epochs", str(args.classifier_epochs)])
    run(["invert", *common, "--out", str(out),
         "--epochs", str(args.invert_epochs), "--batches-per-epoch", "100",
         "--lr", "1e-3", "--final-eval-samples", "2000"])
    run(["analyze", *common, "--out", str(out), "--which", "grid", "--cols", "8"])
    run(["analyze", *common, "--out", str(out), "--which", "tsne",
         "--tsne-samples", "40", "--tsne-perplexity", "20"])

    out_2d = out / "penultimate_2d"
    run(["train-classifier", *common, "--out", str(out_2d),
         "--penultimate-2d", "--epochs", "30", "--lr", "3e-3"])
    run(["analyze", *common, "--out", str(out_2d), "--which", "boundary"])

    print(f"\ndone; artifacts in {out} and {out_2d}")


if __name__ == "__main__":
    main()
