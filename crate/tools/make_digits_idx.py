#!/usr/bin/env python3
"""Export the scikit-learn handwritten digits corpus to IDX files.

Produces train/test image and label files under data/digits/ using the
same layout and filenames as the classic MNIST distribution, so the
`saln` CLI can consume the directory via --dataset mnist --mnist-dir.
Pixel intensities (0..16) are rescaled to the full byte range.
"""

import struct
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits

OUT = Path(__file__).resolve().parent.parent / "data" / "digits"
TRAIN_COUNT = 1297
SEED = 0


def write_images(path: Path, images: np.ndarray) -> None:
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path: Path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    digits = load_digits()
    images = np.round(digits.images / 16.0 * 255.0)
    labels = digits.target

    rng = np.random.RandomState(SEED)
    order = rng.permutation(len(labels))
    images, labels = images[order], labels[order]

    OUT.mkdir(parents=True, exist_ok=True)
    write_images(OUT / "train-images-idx3-ubyte", images[:TRAIN_COUNT])
    write_labels(OUT / "train-labels-idx1-ubyte", labels[:TRAIN_COUNT])
    write_images(OUT / "t10k-images-idx3-ubyte", images[TRAIN_COUNT:])
    write_labels(OUT / "t10k-labels-idx1-ubyte", labels[TRAIN_COUNT:])
    print(f"wrote {TRAIN_COUNT} train / {len(labels) - TRAIN_COUNT} test samples to {OUT}")


if __name__ == "__main__":
    main()
