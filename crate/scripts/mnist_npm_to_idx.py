#!/usr/bin/env python3
"""Convert the digit pool shipped in the `mnist` npm package into MNIST IDX files.

The npm package bundles roughly 10k MNIST digits as normalized floats, one JSON
file per digit. This writes `train-*` and `t10k-*` IDX files (stratified 80/20
split in source order) so the Rust loader can treat them like the official
distribution.

usage: mnist_npm_to_idx.py <npm-package-dir> <out-dir>
"""
import json
import os
import struct
import sys

TRAIN_FRACTION = 0.8


def write_idx(path, images, labels):
    with open(path + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(path + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, out = sys.argv[1], sys.argv[2]
    os.makedirs(out, exist_ok=True)
    train, test = ([], []), ([], [])
    for digit in range(10):
        with open(os.path.join(src, "src", "digits", f"{digit}.json")) as f:
            data = json.load(f)["data"]
        count = len(data) // 784
        cut = int(round(count * TRAIN_FRACTION))
        for i in range(count):
            px = [min(255, max(0, int(round(v * 255)))) for v in data[i * 784:(i + 1) * 784]]
            dst = train if i < cut else test
            dst[0].append(px)
            dst[1].append(digit)
    write_idx(os.path.join(out, "train"), *train)
    write_idx(os.path.join(out, "t10k"), *test)
    print(f"train={len(train[1])} test={len(test[1])} -> {out}")


if __name__ == "__main__":
    main()
