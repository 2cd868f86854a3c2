#!/usr/bin/env python3
"""Write an MNIST subset in IDX format from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist) ships 10,000 MNIST
digits as 784-float JSON arrays normalized to [0, 1]. This script
interleaves the per-digit files, quantizes back to u8 and writes
`images-idx3-ubyte` / `labels-idx1-ubyte` files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist --count 3000
"""
import argparse
import json
import pathlib
import struct


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--count", type=int, default=3000)
    args = ap.parse_args()

    per_digit = []
    for d in range(10):
        blob = json.loads((args.digits_dir / f"{d}.json").read_text())["data"]
        per_digit.append([blob[i:i + 784] for i in range(0, len(blob), 784)])

    images, labels = [], []
    row = 0
    while len(images) < args.count:
        for d in range(10):
            if row < len(per_digit[d]) and len(images) < args.count:
                images.append(per_digit[d][row])
                labels.append(d)
        row += 1

    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in img))
    with open(args.out_dir / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


if __name__ == "__main__":
    main()
