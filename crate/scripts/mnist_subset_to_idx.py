#!/usr/bin/env python3
"""Write a 5000-sample MNIST subset as IDX files.

The subset ships inside the mlxtend wheel (mlxtend/data/data/mnist_5k.csv.gz,
500 images per digit). It is fetched with `pip download`, shuffled with a fixed
seed and split 4000/1000 into the standard MNIST file names:

    train-images-idx3-ubyte  train-labels-idx1-ubyte
    t10k-images-idx3-ubyte   t10k-labels-idx1-ubyte

Usage: scripts/mnist_subset_to_idx.py OUT_DIR [--wheel PATH]
"""
import argparse
import csv
import glob
import gzip
import io
import os
import random
import struct
import subprocess
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(tmp):
    subprocess.run(
        ["pip", "download", "mlxtend==0.24.0", "--no-deps", "-q", "-d", tmp],
        check=True,
    )
    return glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]


def write_idx(path, magic, dims, payload):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(bytes(payload))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("--wheel")
    ap.add_argument("--train", type=int, default=4000)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        raw = zipfile.ZipFile(wheel).read(MEMBER)
    rows = [
        [int(float(v)) for v in r]
        for r in csv.reader(io.TextIOWrapper(gzip.GzipFile(fileobj=io.BytesIO(raw))))
    ]
    random.Random(20180514).shuffle(rows)

    os.makedirs(args.out_dir, exist_ok=True)
    splits = {"train": rows[: args.train], "t10k": rows[args.train :]}
    for name, part in splits.items():
        pixels = [p for r in part for p in r[:784]]
        labels = [r[784] for r in part]
        write_idx(
            os.path.join(args.out_dir, f"{name}-images-idx3-ubyte"),
            0x00000803,
            [len(part), 28, 28],
            pixels,
        )
        write_idx(
            os.path.join(args.out_dir, f"{name}-labels-idx1-ubyte"),
            0x00000801,
            [len(part)],
            labels,
        )
        print(f"{name}: {len(part)} images")


if __name__ == "__main__":
    main()
