#!/usr/bin/env python3
"""Build a desk-scale MNIST subset in IDX format from package-bundled digits.

Source: npm `mnist` 1.1.0, 10,000 MNIST digits stored as x/255 rounded to
3 decimals (pixels recovered with round(v * 255)). The digits are shuffled
with a fixed seed and split into 8,000 train and 2,000 test examples.

The mlxtend 5k sample (exact u8 pixels) is used as a cross-check only: every
one of its digits also appears in the npm set, which confirms the pixel
recovery is lossless.

Usage: prepare_mnist_subset.py OUT_DIR [--workdir DIR]
Writes train-images-idx3-ubyte, train-labels-idx1-ubyte,
t10k-images-idx3-ubyte and t10k-labels-idx1-ubyte into OUT_DIR.
"""
import argparse
import glob
import gzip
import hashlib
import json
import os
import random
import struct
import subprocess
import tarfile
import zipfile


def fetch(workdir):
    os.makedirs(workdir, exist_ok=True)
    if not glob.glob(os.path.join(workdir, "mnist-*.tgz")):
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True)
    if not glob.glob(os.path.join(workdir, "mlxtend-*.whl")):
        subprocess.run(
            ["pip", "download", "--no-deps", "mlxtend==0.24.0", "-d", workdir],
            check=True,
        )


def load_npm(workdir):
    path = glob.glob(os.path.join(workdir, "mnist-*.tgz"))[0]
    images, labels = [], []
    with tarfile.open(path) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            raw = json.load(member)["data"]
            assert len(raw) % 784 == 0
            for i in range(len(raw) // 784):
                px = raw[i * 784 : (i + 1) * 784]
                images.append(bytes(min(255, max(0, round(v * 255))) for v in px))
                labels.append(digit)
    return images, labels


def load_mlxtend(workdir):
    path = glob.glob(os.path.join(workdir, "mlxtend-*.whl"))[0]
    with zipfile.ZipFile(path) as whl:
        text = gzip.decompress(whl.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    images, labels = [], []
    for line in text.splitlines():
        fields = [int(float(x)) for x in line.split(",")]
        images.append(bytes(fields[:784]))
        labels.append(fields[784])
    return images, labels


def write_idx(out_dir, prefix, images, labels):
    with open(os.path.join(out_dir, f"{prefix}-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("--workdir", default="/tmp/funcspace-mnist-src")
    ap.add_argument("--seed", type=int, default=20181)
    ap.add_argument("--n-train", type=int, default=8000)
    args = ap.parse_args()

    fetch(args.workdir)
    all_x, all_y = load_npm(args.workdir)
    check_x, check_y = load_mlxtend(args.workdir)

    known = {hashlib.sha1(x).digest(): y for x, y in zip(all_x, all_y)}
    matched = sum(known.get(hashlib.sha1(x).digest()) == y for x, y in zip(check_x, check_y))
    print(f"cross-check: {matched}/{len(check_x)} mlxtend digits match exactly")

    rng = random.Random(args.seed)
    order = list(range(len(all_x)))
    rng.shuffle(order)
    train_idx, test_idx = order[: args.n_train], order[args.n_train :]
    train_x = [all_x[i] for i in train_idx]
    train_y = [all_y[i] for i in train_idx]
    test_x = [all_x[i] for i in test_idx]
    test_y = [all_y[i] for i in test_idx]

    os.makedirs(args.out_dir, exist_ok=True)
    write_idx(args.out_dir, "train", train_x, train_y)
    write_idx(args.out_dir, "t10k", test_x, test_y)
    print(f"train: {len(train_x)}  test: {len(test_x)}  -> {args.out_dir}")


if __name__ == "__main__":
    main()
