#!/usr/bin/env python3
"""Build manifests for the ten RegDB trials.

Expects the release layout with `Visible/`, `Thermal/` and the index files
`idx/{train,test}_{visible,thermal}_<trial>.txt`, each line `<relative
path> <label>`. Visible images get camera 1 and thermal images camera 2.
Images are re-encoded as PNG under `--out`.

    python3 tools/convert_regdb.py /data/RegDB --out data/regdb
"""

import argparse
import csv
import os
import sys

from PIL import Image

SOURCES = (("visible", "visible", 1), ("thermal", "infrared", 2))


def read_index(path):
    with open(path) as f:
        for line in f:
            parts = line.split()
            if len(parts) == 2:
                yield parts[0], int(parts[1])


def convert(root, out, split, trial):
    manifest = os.path.join(out, f"{split}_trial{trial}.csv")
    n = 0
    with open(manifest, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["path", "identity", "modality", "camera"])
        for kind, modality, cam in SOURCES:
            for rel, label in read_index(os.path.join(root, "idx", f"{split}_{kind}_{trial}.txt")):
                dst_rel = os.path.splitext(rel)[0] + ".png"
                dst = os.path.join(out, "images", dst_rel)
                os.makedirs(os.path.dirname(dst), exist_ok=True)
                if not os.path.exists(dst):
                    Image.open(os.path.join(root, rel)).convert("RGB").save(dst)
                w.writerow([os.path.join("images", dst_rel), label, modality, cam])
                n += 1
    print(f"{manifest}: {n} images")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root")
    ap.add_argument("--out", required=True)
    ap.add_argument("--trials", type=int, default=10)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    try:
        for trial in range(1, args.trials + 1):
            for split in ("train", "test"):
                convert(args.root, args.out, split, trial)
    except OSError as e:
        sys.exit(f"conversion failed: {e}")


if __name__ == "__main__":
    main()
