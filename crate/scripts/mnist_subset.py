"""Convert the 10k MNIST digits bundled in the npm `mnist` package into
gzipped IDX files (the format read by `mgrade::tasks::images`).

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_subset.py package/src/digits data/mnist-subset
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main(src: Path, dst: Path) -> None:
    images, labels = [], []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        arr = np.asarray(data, dtype=np.float64).reshape(-1, 784)
        images.append(np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8))
        labels.append(np.full(arr.shape[0], digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(labels), 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(dst / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.tobytes())
    print(f"wrote {len(labels)} images to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
