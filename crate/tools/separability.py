#!/usr/bin/env python3
"""Pixel-space nearest-neighbour baseline for a dataset manifest.

Each image becomes its grey intensity (channel mean / 255), standardised to
zero mean and unit variance. Every infrared image is matched to the closest
visible image by Euclidean distance; the first of several equally close
images wins. Prints the fraction of infrared queries whose match has the
same identity.

    python3 tools/separability.py data/manifest.csv
"""

import argparse
import csv
import os
import sys

import numpy as np
from PIL import Image


def intensity(path):
    a = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    g = a.sum(axis=2).ravel() / (3.0 * 255.0)
    sd = max(g.std(), 1e-12)
    return (g - g.mean()) / sd


def load(manifest):
    base = os.path.dirname(os.path.abspath(manifest))
    rows = {"visible": [], "infrared": []}
    with open(manifest, newline="") as f:
        for r in csv.DictReader(f):
            p = r["path"]
            if not os.path.isabs(p):
                p = os.path.join(base, p)
            m = r["modality"].strip().lower()
            m = {"rgb": "visible", "ir": "infrared"}.get(m, m)
            rows[m].append((int(r["identity"]), intensity(p)))
    return rows


def pixel_rank1(rows):
    vis_ids = np.array([i for i, _ in rows["visible"]])
    vis = np.stack([v for _, v in rows["visible"]])
    hits = 0
    for ident, q in rows["infrared"]:
        d = ((vis - q) ** 2).sum(axis=1)
        hits += int(vis_ids[int(np.argmin(d))] == ident)
    return hits / len(rows["infrared"])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("manifest")
    args = ap.parse_args()
    rows = load(args.manifest)
    if not rows["visible"] or not rows["infrared"]:
        sys.exit("manifest needs both visible and infrared rows")
    print(f"pixel_rank1 {pixel_rank1(rows):.6f}")


if __name__ == "__main__":
    main()
