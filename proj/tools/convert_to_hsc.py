#!/usr/bin/env python3
"""Convert a public hyperspectral scene to the .hsc container.

Most public HSI benchmarks (Indian Pines, Pavia University, Salinas, ...) are
distributed as a pair of MATLAB files: a H x W x B reflectance cube and a
H x W ground-truth raster with 0 = unlabeled and 1..K = class ids. This script
reads that pair and writes one .hsc file:

    magic "HSC1"
    u32 height, width, bands, num_classes        (little endian)
    f32[H*W*B] raster, band-interleaved by pixel (row-major pixels)
    i32[H*W]   labels, row-major
    u32 names flag (0 = none, 1 = num_classes length-prefixed strings)

Example:

    python3 tools/convert_to_hsc.py \
        --data Indian_pines_corrected.mat --gt Indian_pines_gt.mat \
        --out indian_pines.hsc \
        --names Alfalfa Corn-notill Corn-mintill Corn Grass-pasture \
                Grass-trees Grass-pasture-mowed Hay-windrowed Oats \
                Soybean-notill Soybean-mintill Soybean-clean Wheat Woods \
                Buildings-Grass-Trees-Drives Stone-Steel-Towers

Requires numpy and scipy (plus h5py for MATLAB v7.3 files).
"""

import argparse
import struct
import sys

import numpy as np


def load_mat_array(path, key=None):
    """Return the main array from a .mat file, trying scipy then h5py."""
    try:
        from scipy.io import loadmat

        mat = loadmat(path)
        entries = {k: v for k, v in mat.items() if not k.startswith("__")}
    except NotImplementedError:
        # MATLAB v7.3 files are HDF5
        import h5py

        with h5py.File(path, "r") as f:
            entries = {k: np.array(f[k]).T for k in f.keys()}
    if key is not None:
        if key not in entries:
            sys.exit(f"error: key '{key}' not in {path}; available: {sorted(entries)}")
        return np.asarray(entries[key])
    arrays = [v for v in entries.values() if isinstance(v, np.ndarray) and v.ndim >= 2]
    if len(arrays) != 1:
        sys.exit(
            f"error: {path} holds {len(arrays)} candidate arrays "
            f"({sorted(entries)}); pick one with --data-key/--gt-key"
        )
    return arrays[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", required=True, help="MATLAB file with the H x W x B cube")
    ap.add_argument("--gt", required=True, help="MATLAB file with the H x W ground truth")
    ap.add_argument("--out", required=True, help="output .hsc path")
    ap.add_argument("--data-key", help="variable name inside --data (default: the only array)")
    ap.add_argument("--gt-key", help="variable name inside --gt (default: the only array)")
    ap.add_argument("--names", nargs="*", default=[], help="optional class names, one per class")
    args = ap.parse_args()

    cube = np.asarray(load_mat_array(args.data, args.data_key), dtype=np.float64)
    gt = np.asarray(load_mat_array(args.gt, args.gt_key))
    if cube.ndim != 3:
        sys.exit(f"error: data array is {cube.shape}, expected H x W x B")
    if gt.shape != cube.shape[:2]:
        sys.exit(f"error: ground truth {gt.shape} does not match cube {cube.shape[:2]}")
    if not np.isfinite(cube).all():
        sys.exit("error: cube contains non-finite values")

    h, w, b = cube.shape
    labels = gt.astype(np.int64)
    if labels.min() < 0:
        sys.exit("error: negative label values")
    k = int(labels.max())
    if k < 1:
        sys.exit("error: ground truth has no labeled pixels")
    if args.names and len(args.names) != k:
        sys.exit(f"error: {len(args.names)} names given for {k} classes")

    with open(args.out, "wb") as f:
        f.write(b"HSC1")
        f.write(struct.pack("<4I", h, w, b, k))
        f.write(cube.astype("<f4").tobytes())  # H x W x B is already pixel-major
        f.write(labels.astype("<i4").tobytes())
        if args.names:
            f.write(struct.pack("<I", 1))
            for name in args.names:
                raw = name.encode("utf-8")
                f.write(struct.pack("<I", len(raw)) + raw)
        else:
            f.write(struct.pack("<I", 0))

    labeled = int((labels > 0).sum())
    print(f"wrote {args.out}: {h}x{w}x{b}, {k} classes, {labeled} labeled pixels")


if __name__ == "__main__":
    main()
