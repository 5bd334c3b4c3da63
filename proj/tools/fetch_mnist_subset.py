#!/usr/bin/env python3
"""Builds a small stratified MNIST split (IDX format) from the 5000-digit sample bundled with mlxtend.

Usage: fetch_mnist_subset.py [OUT_DIR] [--train-per-class 400]
"""
import argparse
import gzip
import io
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

WHEEL_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(tmp):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:", "mlxtend==0.24.0", "-d", tmp],
        check=True,
        stdout=subprocess.DEVNULL,
    )
    wheels = list(pathlib.Path(tmp).glob("mlxtend-*.whl"))
    if not wheels:
        sys.exit("mlxtend wheel not found after download")
    return wheels[0]


def read_rows(wheel):
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read(WHEEL_MEMBER)).decode()
    rows = []
    for line in raw.splitlines():
        vals = [int(float(v)) for v in line.split(",")]
        rows.append((vals[:784], vals[784]))
    return rows


def write_idx(path, dims, payload):
    with open(path, "wb") as f:
        f.write(bytes([0, 0, 8, len(dims)]))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(bytes(payload))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", nargs="?", default="data/mnist5k")
    ap.add_argument("--train-per-class", type=int, default=400)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        rows = read_rows(fetch_wheel(tmp))

    by_class = {c: [] for c in range(10)}
    for px, y in rows:
        by_class[y].append(px)
    train, test = [], []
    for c in range(10):
        train += [(px, c) for px in by_class[c][: args.train_per_class]]
        test += [(px, c) for px in by_class[c][args.train_per_class :]]

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, split in (("train", train), ("test", test)):
        pixels = [p for px, _ in split for p in px]
        write_idx(out / f"{name}-images-idx3-ubyte", [len(split), 28, 28], pixels)
        write_idx(out / f"{name}-labels-idx1-ubyte", [len(split)], [y for _, y in split])
        print(f"{name}: {len(split)} examples")


if __name__ == "__main__":
    main()
