"""Binary PGM/PPM writers and a PGM reader."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pgm(path, labels) -> None:
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError("PGM needs a 2-D array")
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("PGM values must fit in one byte")
    h, w = arr.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.astype(np.uint8).tobytes())


def write_ppm(path, image) -> None:
    """``image`` is ``3xHxW`` in [0, 1]."""
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    _, h, w = arr.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.moveaxis(arr, 0, -1).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()
