#!/usr/bin/env python3
"""Build a seeded MNIST subset in IDX format from the digits bundled in the
npm `mnist` package (10,000 samples, 28x28, stored as JSON floats in [0,1]).

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits tests/data --count 1000 --seed 0
"""
import argparse
import json
import pathlib
import struct

import numpy as np


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--count", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--prefix", default="mnist1k")
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        with open(pathlib.Path(args.digits_dir) / f"{digit}.json") as f:
            flat = json.load(f)["data"]
        arr = np.asarray(flat, dtype=np.float64).reshape(-1, 784)
        images.append(np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8))
        labels.append(np.full(arr.shape[0], digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    rng = np.random.default_rng(args.seed)
    pick = rng.choice(images.shape[0], size=args.count, replace=False)
    images, labels = images[pick], labels[pick]

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{args.prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, args.count, 28, 28))
        f.write(images.tobytes())
    with open(out / f"{args.prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, args.count))
        f.write(labels.tobytes())
    print(f"wrote {args.count} samples, class counts {np.bincount(labels, minlength=10).tolist()}")


if __name__ == "__main__":
    main()
