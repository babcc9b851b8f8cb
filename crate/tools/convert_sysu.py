#!/usr/bin/env python3
"""Build train/test manifests from an extracted SYSU-MM01 directory.

Expects the release layout `cam1..cam6/<pid:04d>/*.jpg` plus
`exp/train_id.txt`, `exp/val_id.txt` and `exp/test_id.txt`. Training uses the
train and val identities, testing the test identities. Cameras 1, 2, 4 and 5
are visible, 3 and 6 infrared. Images are re-encoded as PNG under `--out`
because the loader only reads PNG.

    python3 tools/convert_sysu.py /data/SYSU-MM01 --out data/sysu
"""

import argparse
import csv
import os
import sys

from PIL import Image

VISIBLE = (1, 2, 4, 5)
INFRARED = (3, 6)


def read_ids(path):
    with open(path) as f:
        return sorted({int(t) for t in f.read().replace("\n", ",").split(",") if t.strip()})


def collect(root, ids):
    rows = []
    for cam in VISIBLE + INFRARED:
        modality = "visible" if cam in VISIBLE else "infrared"
        for pid in ids:
            d = os.path.join(root, f"cam{cam}", f"{pid:04d}")
            if not os.path.isdir(d):
                continue
            for name in sorted(os.listdir(d)):
                if name.lower().endswith((".jpg", ".jpeg", ".png")):
                    rows.append((os.path.join(d, name), pid, modality, cam))
    return rows


def write(rows, out, split):
    img_dir = os.path.join(out, split)
    manifest = os.path.join(out, f"{split}.csv")
    with open(manifest, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["path", "identity", "modality", "camera"])
        for src, pid, modality, cam in rows:
            rel = os.path.join(split, f"cam{cam}", f"{pid:04d}", os.path.splitext(os.path.basename(src))[0] + ".png")
            dst = os.path.join(out, rel)
            os.makedirs(os.path.dirname(dst), exist_ok=True)
            if not os.path.exists(dst):
                Image.open(src).convert("RGB").save(dst)
            w.writerow([rel, pid, modality, cam])
    print(f"{manifest}: {len(rows)} images in {img_dir}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root")
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    exp = os.path.join(args.root, "exp")
    try:
        train = read_ids(os.path.join(exp, "train_id.txt")) + read_ids(os.path.join(exp, "val_id.txt"))
        test = read_ids(os.path.join(exp, "test_id.txt"))
    except OSError as e:
        sys.exit(f"cannot read identity lists: {e}")
    os.makedirs(args.out, exist_ok=True)
    write(collect(args.root, sorted(set(train))), args.out, "train")
    write(collect(args.root, test), args.out, "test")


if __name__ == "__main__":
    main()
