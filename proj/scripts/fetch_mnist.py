#!/usr/bin/env python3
"""Fetch an MNIST subset and write standard IDX files.

Downloads the npm package `mnist` (which bundles 10,000 genuine MNIST digits
as JSON, pixel values stored as v/255 rounded to three decimals, so the
original bytes are recovered exactly by round(v*255)), interleaves the
class-grouped images round-robin, and writes:

    <out>/train-images-idx3-ubyte   (8000 images)
    <out>/train-labels-idx1-ubyte
    <out>/t10k-images-idx3-ubyte    (2000 images, used as the validation split)
    <out>/t10k-labels-idx1-ubyte

If you have the full 60k/10k MNIST files, point the CLI at them instead;
this script only exists for environments without access to the usual hosts.

Usage: fetch_mnist.py [OUT_DIR] [--package-dir DIR]
"""

import json
import struct
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

TRAIN_COUNT = 8000


def load_digits(pkg_dir: Path):
    digits = {}
    for d in range(10):
        raw = json.loads((pkg_dir / "src" / "digits" / f"{d}.json").read_text())["data"]
        n = len(raw) // 784
        digits[d] = [
            bytes(min(255, max(0, round(v * 255))) for v in raw[i * 784:(i + 1) * 784])
            for i in range(n)
        ]
    return digits


def interleave(digits):
    images, labels = [], []
    idx = [0] * 10
    remaining = sum(len(v) for v in digits.values())
    while remaining:
        for d in range(10):
            if idx[d] < len(digits[d]):
                images.append(digits[d][idx[d]])
                labels.append(d)
                idx[d] += 1
                remaining -= 1
    return images, labels


def write_images(path: Path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(img)


def write_labels(path: Path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    args = sys.argv[1:]
    out = Path("data/mnist")
    pkg_dir = None
    while args:
        a = args.pop(0)
        if a == "--package-dir":
            pkg_dir = Path(args.pop(0))
        else:
            out = Path(a)
    out.mkdir(parents=True, exist_ok=True)

    if pkg_dir is not None:
        digits = load_digits(pkg_dir)
    else:
        with tempfile.TemporaryDirectory() as td:
            subprocess.run(
                ["npm", "pack", "mnist@1.1.0", "--pack-destination", td],
                check=True, stdout=subprocess.DEVNULL,
            )
            tgz = next(Path(td).glob("mnist-*.tgz"))
            with tarfile.open(tgz) as tf:
                tf.extractall(td)
            digits = load_digits(Path(td) / "package")

    images, labels = interleave(digits)
    if len(images) < TRAIN_COUNT:
        sys.exit(f"expected more than {TRAIN_COUNT} images, got {len(images)}")
    write_images(out / "train-images-idx3-ubyte", images[:TRAIN_COUNT])
    write_labels(out / "train-labels-idx1-ubyte", labels[:TRAIN_COUNT])
    write_images(out / "t10k-images-idx3-ubyte", images[TRAIN_COUNT:])
    write_labels(out / "t10k-labels-idx1-ubyte", labels[TRAIN_COUNT:])
    print(f"wrote {TRAIN_COUNT} train / {len(images) - TRAIN_COUNT} val images to {out}")


if __name__ == "__main__":
    main()
