#!/usr/bin/env python3
"""Convert the digit set shipped in the npm `mnist` package into IDX files.

Usage: mnist_from_npm.py <package>/src/digits <out-dir> [--test-fraction 0.15]

Each digits/<k>.json holds {"data": [...]} with 784 floats in [0, 1] per
image. About 85% of every class goes to the train file and the rest to t10k.
"""
import argparse
import gzip
import json
import pathlib
import struct


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--test-fraction", type=float, default=0.15)
    args = ap.parse_args()

    per_class = {}
    for k in range(10):
        flat = json.loads((args.digits_dir / f"{k}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        imgs = [bytes(min(255, max(0, round(v * 255))) for v in flat[i:i + 784])
                for i in range(0, len(flat), 784)]
        per_class[k] = imgs

    train, test = [], []
    for k, imgs in per_class.items():
        cut = len(imgs) - round(len(imgs) * args.test_fraction)
        train += [(img, k) for img in imgs[:cut]]
        test += [(img, k) for img in imgs[cut:]]
    # Interleave classes deterministically so any contiguous slice is mixed.
    train = [p for _, p in sorted(enumerate(train), key=lambda q: ((q[0] * 7919) % len(train)))]
    test = [p for _, p in sorted(enumerate(test), key=lambda q: ((q[0] * 7919) % len(test)))]

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for stem, pairs in (("train", train), ("t10k", test)):
        write_idx(args.out_dir / f"{stem}-images-idx3-ubyte.gz", 0x803, (len(pairs), 28, 28),
                  b"".join(img for img, _ in pairs))
        write_idx(args.out_dir / f"{stem}-labels-idx1-ubyte.gz", 0x801, (len(pairs),),
                  bytes(lbl for _, lbl in pairs))
        print(stem, len(pairs))


if __name__ == "__main__":
    main()
