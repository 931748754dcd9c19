"""Convert the digit JSON files of the npm ``mnist`` package into IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/build_mnist_subset.py package/src/digits data/mnist3k

The package ships 10,000 MNIST digits with pixels rounded to three
decimals; we rescale to bytes, draw a seeded 2,000/1,000 train/test split
and write gzipped IDX files.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from grasplab.data import write_idx


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20231)
    args = ap.parse_args()

    images, labels = [], []
    for d in range(10):
        with open(Path(args.digits_dir) / f"{d}.json") as fh:
            arr = np.asarray(json.load(fh)["data"], dtype=np.float64).reshape(-1, 28, 28)
        images.append(np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8))
        labels.append(np.full(len(arr), d, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    order = np.random.default_rng(args.seed).permutation(len(labels))
    tr = order[:args.train]
    te = order[args.train:args.train + args.test]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(images[tr], labels[tr], out / "train-images-idx3-ubyte.gz", out / "train-labels-idx1-ubyte.gz")
    write_idx(images[te], labels[te], out / "test-images-idx3-ubyte.gz", out / "test-labels-idx1-ubyte.gz")
    print(f"wrote {len(tr)} train / {len(te)} test images to {out}")


if __name__ == "__main__":
    main()
