"""Convert the 5,000-image MNIST subset shipped in the mlxtend wheel to IDX files.

Usage:
    pip download mlxtend --no-deps -d /tmp/mlx
    python3 scripts/mnist_subset_to_idx.py /tmp/mlx/mlxtend-*.whl data/mnist-5k

The subset holds 500 images per digit in class order. Images are shuffled
with a fixed seed, then split into 4,000 training and 1,000 test images.
"""

import argparse
import gzip
import random
import struct
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
ROWS = COLS = 28


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), ROWS, COLS))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("wheel", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    text = gzip.decompress(zipfile.ZipFile(args.wheel).read(MEMBER)).decode()
    rows = [[int(v) for v in line.split(",")] for line in text.splitlines() if line]
    random.Random(args.seed).shuffle(rows)
    images = [r[:-1] for r in rows]
    labels = [r[-1] for r in rows]
    assert all(len(img) == ROWS * COLS for img in images)

    n_train = len(rows) - args.test
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_images(args.out_dir / "train-images-idx3-ubyte", images[:n_train])
    write_labels(args.out_dir / "train-labels-idx1-ubyte", labels[:n_train])
    write_images(args.out_dir / "t10k-images-idx3-ubyte", images[n_train:])
    write_labels(args.out_dir / "t10k-labels-idx1-ubyte", labels[n_train:])
    print(f"wrote {n_train} training and {args.test} test images to {args.out_dir}")


if __name__ == "__main__":
    main()
