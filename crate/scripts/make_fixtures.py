#!/usr/bin/env python3
"""Regenerate the binary and numeric test fixtures.

Everything here is written from the format descriptions alone, without
reading the Rust sources, so the Rust tests compare against an independent
implementation.

    crates/core/tests/fixtures/affine_4x4.txt
    crates/capsforge/tests/fixtures/two-images-idx3-ubyte
    crates/capsforge/tests/fixtures/two-labels-idx1-ubyte
    crates/capsforge/tests/fixtures/one-record.bin
"""
import math
import os
import struct

import numpy as np

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CORE = os.path.join(ROOT, "crates", "core", "tests", "fixtures")
STD = os.path.join(ROOT, "crates", "capsforge", "tests", "fixtures")


def affine_matrix(h, w, angle, shx, shy, tx, ty, scale):
    """3x3 forward map on (x, y, 1): T . C . R . Shear . Scale . C^-1."""
    cx, cy = (w - 1) / 2, (h - 1) / 2
    t = np.array([[1, 0, tx], [0, 1, ty], [0, 0, 1]], float)
    c = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], float)
    c_inv = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], float)
    th = math.radians(angle)
    r = np.array([[math.cos(th), -math.sin(th), 0], [math.sin(th), math.cos(th), 0], [0, 0, 1]])
    sh = np.array([[1, shx, 0], [shy, 1, 0], [0, 0, 1]], float)
    s = np.diag([scale, scale, 1.0])
    return t @ c @ r @ sh @ s @ c_inv


def warp(img, m):
    h, w = img.shape
    inv = np.linalg.inv(m)
    out = np.zeros_like(img)

    def px(x, y):
        return img[y, x] if 0 <= x < w and 0 <= y < h else 0.0

    for y in range(h):
        for x in range(w):
            sx, sy, _ = inv @ np.array([x, y, 1.0])
            x0, y0 = math.floor(sx), math.floor(sy)
            fx, fy = sx - x0, sy - y0
            v = ((1 - fx) * (1 - fy) * px(x0, y0) + fx * (1 - fy) * px(x0 + 1, y0)
                 + (1 - fx) * fy * px(x0, y0 + 1) + fx * fy * px(x0 + 1, y0 + 1))
            out[y, x] = min(max(v, 0.0), 1.0)
    return out


def affine_fixture():
    img = np.array([[0.0, 0.1, 0.2, 0.3],
                    [0.4, 0.5, 0.6, 0.7],
                    [0.8, 0.9, 1.0, 0.25],
                    [0.5, 0.75, 0.05, 0.15]])
    cases = [
        (20.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        (20.0, 0.0, 0.0, 0.0, 0.0, 1.5),
        (-13.0, 0.15, -0.1, 0.4, -0.7, 1.5),
        (0.0, 0.2, 0.0, 0.0, 0.0, 1.0),
    ]
    lines = ["# angle_deg shear_x shear_y tx ty scale, then 16 input and 16 output pixels (row-major 4x4)"]
    for case in cases:
        out = warp(img, affine_matrix(4, 4, *case))
        lines.append(" ".join(repr(v) for v in case))
        lines.append(" ".join(repr(float(v)) for v in img.ravel()))
        lines.append(" ".join(repr(float(v)) for v in out.ravel()))
    with open(os.path.join(CORE, "affine_4x4.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


def idx_fixture():
    # two 3x2 images, pixel k of image n = (n * 100 + k * 37) % 256
    pixels = bytes((n * 100 + k * 37) % 256 for n in range(2) for k in range(6))
    with open(os.path.join(STD, "two-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, 2, 3, 2) + pixels)
    with open(os.path.join(STD, "two-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, 2) + bytes([7, 2]))


def cifar_fixture():
    # label 6; channel c, row y, column x holds (c * 85 + y * 7 + x * 3) % 256
    rec = bytes([6]) + bytes((c * 85 + y * 7 + x * 3) % 256
                             for c in range(3) for y in range(32) for x in range(32))
    with open(os.path.join(STD, "one-record.bin"), "wb") as f:
        f.write(rec)


if __name__ == "__main__":
    os.makedirs(CORE, exist_ok=True)
    os.makedirs(STD, exist_ok=True)
    affine_fixture()
    idx_fixture()
    cifar_fixture()
