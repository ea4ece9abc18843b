"""Build the bundled MNIST subset (gzipped IDX) used by the test suites.

Source: the `mnist` npm package (MIT), which ships 10,000 MNIST training
digits as JSON floats rounded to 3 decimals. Rounding `v * 255` recovers the
original bytes exactly. The digits are split per class, 80% train / 20% test.

usage: python3 scripts/make_mnist_subset.py path/to/package/src/digits data/mnist-10k
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload)


def main(digits_dir, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    images, labels = [], []
    for digit in range(10):
        raw = np.array(json.loads((Path(digits_dir) / f"{digit}.json").read_text())["data"])
        n = len(raw) // 784
        images.append(np.rint(raw[: n * 784] * 255).astype(np.uint8).reshape(n, 784))
        labels += [digit] * n
    images, labels = np.concatenate(images), np.array(labels, dtype=np.uint8)

    rng = np.random.RandomState(20180527)
    train, test = [], []
    for digit in range(10):
        idx = rng.permutation(np.flatnonzero(labels == digit))
        cut = len(idx) // 5
        test.extend(idx[:cut])
        train.extend(idx[cut:])
    train, test = rng.permutation(train), rng.permutation(test)

    for prefix, idx in (("train", train), ("t10k", test)):
        write_idx(out / f"{prefix}-images-idx3-ubyte.gz", 0x803, (len(idx), 28, 28), images[idx].tobytes())
        write_idx(out / f"{prefix}-labels-idx1-ubyte.gz", 0x801, (len(idx),), labels[idx].tobytes())


if __name__ == "__main__":
    main(*sys.argv[1:3])
