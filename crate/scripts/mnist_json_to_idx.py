#!/usr/bin/env python3
"""Convert the per-digit JSON files of the `mnist` npm package (10,000 MNIST
digits, pixels stored as byte/255 rounded to three decimals) into IDX files.

Usage: mnist_json_to_idx.py <package/src/digits> <out_dir>

Digits are interleaved with a fixed permutation so that any prefix of the file
contains all classes.
"""
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main(src: Path, out: Path) -> None:
    images, labels = [], []
    for digit in range(10):
        raw = np.asarray(json.loads((src / f"{digit}.json").read_text())["data"], dtype=np.float64)
        raw = raw.reshape(-1, 28 * 28)
        images.append(np.clip(np.rint(raw * 255.0), 0, 255).astype(np.uint8))
        labels.append(np.full(len(raw), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(0).permutation(len(images))
    images, labels = images[order], labels[order]

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "images-idx3-ubyte", "wb") as fh:
        fh.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        fh.write(images.tobytes())
    with open(out / "labels-idx1-ubyte", "wb") as fh:
        fh.write(struct.pack(">II", 0x801, len(labels)))
        fh.write(labels.tobytes())
    print(f"wrote {len(images)} images to {out}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
