#!/usr/bin/env python3
"""Build MNIST IDX files from the npm `mnist` package (no direct dataset
mirror is reachable from this environment; the npm registry is).

The package bundles 10,000 genuine MNIST digits (roughly 1,000 per class)
with pixels scaled to [0, 1] at three decimals, which converts back to the
original uint8 values exactly. Output: train/test IDX files (50 test
images per class, the rest train, shuffled with a fixed seed) under --out
(default data/mnist).

Usage: python3 scripts/fetch_mnist.py [--out data/mnist]
"""

import argparse
import json
import struct
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

import numpy as np

TEST_PER_CLASS = 50
SHUFFLE_SEED = 0


def write_idx_images(path: Path, images: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, images.shape[0], 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path: Path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def fetch_package(workdir: Path) -> Path:
    subprocess.run(
        ["npm", "pack", "mnist", "--silent"],
        cwd=workdir,
        check=True,
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    tarballs = sorted(workdir.glob("mnist-*.tgz"))
    if not tarballs:
        raise RuntimeError("npm pack mnist produced no tarball")
    with tarfile.open(tarballs[0]) as tf:
        tf.extractall(workdir)
    digits_dir = workdir / "package" / "src" / "digits"
    if not digits_dir.is_dir():
        raise RuntimeError(f"unexpected package layout, no {digits_dir}")
    return digits_dir


def load_digits(digits_dir: Path):
    images, labels = [], []
    for d in range(10):
        with open(digits_dir / f"{d}.json") as f:
            flat = np.asarray(json.load(f)["data"], dtype=float)
        imgs = flat.reshape(-1, 784)
        # Pixels are p/255 rounded to 3 decimals; round-trip is exact.
        images.append(np.rint(imgs * 255.0).astype(np.uint8))
        labels.append(np.full(imgs.shape[0], d, dtype=np.uint8))
    return images, labels


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/mnist", help="output directory")
    args = parser.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        digits_dir = fetch_package(Path(tmp))
        images, labels = load_digits(digits_dir)

        train_x, train_y, test_x, test_y = [], [], [], []
        for imgs, labs in zip(images, labels):
            if imgs.shape[0] <= TEST_PER_CLASS:
                raise RuntimeError(f"class {labs[0]} has only {imgs.shape[0]} samples")
            n_train = imgs.shape[0] - TEST_PER_CLASS
            train_x.append(imgs[:n_train])
            train_y.append(labs[:n_train])
            test_x.append(imgs[n_train:])
            test_y.append(labs[n_train:])

        rng = np.random.default_rng(SHUFFLE_SEED)
        train_x = np.concatenate(train_x)
        train_y = np.concatenate(train_y)
        test_x = np.concatenate(test_x)
        test_y = np.concatenate(test_y)
        tr_perm = rng.permutation(train_x.shape[0])
        te_perm = rng.permutation(test_x.shape[0])
        train_x = train_x[tr_perm].reshape(-1, 28, 28)
        train_y = train_y[tr_perm]
        test_x = test_x[te_perm].reshape(-1, 28, 28)
        test_y = test_y[te_perm]

    write_idx_images(out / "train-images-idx3-ubyte", train_x)
    write_idx_labels(out / "train-labels-idx1-ubyte", train_y)
    write_idx_images(out / "t10k-images-idx3-ubyte", test_x)
    write_idx_labels(out / "t10k-labels-idx1-ubyte", test_y)
    print(f"wrote {train_x.shape[0]} train / {test_x.shape[0]} test images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
