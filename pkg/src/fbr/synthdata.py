"""Synthetic shapes-on-texture images where each class mostly co-occurs with one texture.

Class c is drawn as a fixed shape (square, disc, triangle, cross). The image
background texture is drawn from the co-occurrence row of the image's first
class, so a classifier can partly solve the task by looking at the background.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ArgumentError, GenerationError
from .netpbm import write_pgm, write_ppm
from .numerics import DTYPE

SHAPES = ("square", "disc", "triangle", "cross")
TEXTURES = ("stripes", "checker", "gradient", "speckle")
CLASS_COLORS = np.array([[0.85, 0.2, 0.2], [0.2, 0.75, 0.25], [0.25, 0.3, 0.9], [0.9, 0.8, 0.2]])
SPLITS = {"train": 0, "val": 1}


def default_cooccurrence(num_classes: int, textures: int, diag: float = 0.9) -> np.ndarray:
    m = np.full((num_classes, textures), (1.0 - diag) / (textures - 1))
    for c in range(num_classes):
        m[c, c % textures] = diag
    return m


@dataclass
class SynthConfig:
    num_classes: int = 4
    textures: int = 4
    image_size: tuple = (64, 64)
    cooccurrence: list | None = None
    train_count: int = 512
    val_count: int = 128
    rng_seed: int = 0
    two_shape_prob: float = 0.5
    color_jitter: float = 0.15

    def __post_init__(self):
        if self.num_classes < 2:
            raise ArgumentError("num_classes must be >= 2")
        if self.num_classes > len(SHAPES) or self.textures > len(TEXTURES):
            raise ArgumentError(f"at most {len(SHAPES)} classes and {len(TEXTURES)} textures")
        self.image_size = tuple(self.image_size)
        if self.cooccurrence is None:
            self.cooccurrence = default_cooccurrence(self.num_classes, self.textures).tolist()
        m = np.asarray(self.cooccurrence, dtype=np.float64)
        if m.shape != (self.num_classes, self.textures):
            raise ArgumentError("cooccurrence must be num_classes x textures")
        if np.any(m < 0) or not np.allclose(m.sum(1), 1.0, atol=1e-9):
            raise ArgumentError("cooccurrence rows must be probability vectors")

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.cooccurrence, dtype=np.float64)

    def cooccurring_texture(self, c: int) -> int:
        """Most likely texture index (0-based) for 1-based class ``c``."""
        return int(np.argmax(self.matrix[c - 1]))


@dataclass
class Sample:
    image: torch.Tensor
    label: np.ndarray
    gt_mask: np.ndarray
    texture: int = 0
    classes: list = field(default_factory=list)
    primary_class: int = 0


def _texture(kind: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    c0, c1 = rng.uniform(0.0, 1.0, size=(2, 3))
    angle = rng.uniform(0, np.pi)
    if kind == "stripes":
        period = rng.uniform(5, 9)
        t = 0.5 + 0.5 * np.sin(2 * np.pi * (xx * np.cos(angle) + yy * np.sin(angle)) / period)
    elif kind == "checker":
        cell = int(rng.integers(4, 8))
        t = (((yy // cell) + (xx // cell)) % 2).astype(np.float64)
    elif kind == "gradient":
        proj = xx * np.cos(angle) + yy * np.sin(angle)
        t = (proj - proj.min()) / (proj.max() - proj.min())
    elif kind == "speckle":
        t = (rng.random((h, w)) < 0.3).astype(np.float64)
    else:
        raise ArgumentError(f"unknown texture {kind}")
    return c0[:, None, None] * (1 - t) + c1[:, None, None] * t


def _shape_mask(kind: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == "square":
        s = int(rng.integers(16, 27))
        top, left = rng.integers(0, h - s + 1), rng.integers(0, w - s + 1)
        return (yy >= top) & (yy < top + s) & (xx >= left) & (xx < left + s)
    if kind == "disc":
        r = rng.uniform(9, 13.5)
        cy, cx = rng.uniform(r, h - r), rng.uniform(r, w - r)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "triangle":
        s = int(rng.integers(22, 33))
        top, left = rng.integers(0, h - s + 1), rng.integers(0, w - s + 1)
        dy = yy - top
        half = dy / 2.0
        mid = left + s / 2.0
        return (dy >= 0) & (dy < s) & (xx >= mid - half) & (xx < mid + half + 1)
    if kind == "cross":
        s = int(rng.integers(21, 30))
        arm = s // 3
        top, left = rng.integers(0, h - s + 1), rng.integers(0, w - s + 1)
        inside = (yy >= top) & (yy < top + s) & (xx >= left) & (xx < left + s)
        vert = (xx >= left + arm) & (xx < left + 2 * arm)
        horiz = (yy >= top + arm) & (yy < top + 2 * arm)
        return inside & (vert | horiz)
    raise ArgumentError(f"unknown shape {kind}")


def sample_seed(config: SynthConfig, split: str, index: int) -> np.random.SeedSequence:
    if split not in SPLITS:
        raise ArgumentError(f"unknown split {split!r}")
    return np.random.SeedSequence([int(config.rng_seed), SPLITS[split], int(index)])


def generate_one(config: SynthConfig, split: str, index: int, max_tries: int = 100) -> Sample:
    rng = np.random.default_rng(sample_seed(config, split, index))
    h, w = config.image_size
    c_count = config.num_classes
    n_shapes = 2 if rng.random() < config.two_shape_prob else 1
    classes = [int(c) + 1 for c in rng.choice(c_count, size=n_shapes, replace=False)]
    texture = int(rng.choice(config.textures, p=config.matrix[classes[0] - 1]))
    image = _texture(TEXTURES[texture], h, w, rng)
    gt = np.full((h, w), c_count + 1, dtype=np.int64)
    for c in classes:
        for _ in range(max_tries):
            m = _shape_mask(SHAPES[c - 1], h, w, rng)
            grown = m.copy()
            grown[1:] |= m[:-1]
            grown[:-1] |= m[1:]
            grown[:, 1:] |= m[:, :-1]
            grown[:, :-1] |= m[:, 1:]
            if not np.any(grown & (gt != c_count + 1)):
                break
        else:
            raise GenerationError(f"could not place shape for class {c} in {split}[{index}]")
        gt[m] = c
        color = np.clip(CLASS_COLORS[c - 1] + rng.uniform(-config.color_jitter, config.color_jitter, 3), 0, 1)
        image[:, m] = color[:, None]
    fg = float((gt != c_count + 1).mean())
    if not 0.05 <= fg <= 0.5:
        raise GenerationError(f"foreground fraction {fg:.3f} out of range in {split}[{index}]")
    image = np.clip(image + rng.normal(0.0, 0.02, size=image.shape), 0.0, 1.0)
    label = np.zeros(c_count, dtype=np.int64)
    for c in np.unique(gt):
        if c <= c_count:
            label[c - 1] = 1
    return Sample(torch.as_tensor(image, dtype=DTYPE), label, gt, texture, sorted(classes), classes[0])


def generate(config: SynthConfig, split: str = "train") -> list[Sample]:
    count = {"train": config.train_count, "val": config.val_count}[split]
    return [generate_one(config, split, i) for i in range(count)]


def dump(samples: list[Sample], out_dir) -> None:
    """Images as PPM, masks as PGM and a label CSV (index plus one column per class)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        c = len(samples[0].label) if samples else 0
        writer.writerow(["index"] + [f"class_{i + 1}" for i in range(c)])
        for i, s in enumerate(samples):
            write_ppm(out / f"{i:05d}.ppm", s.image.numpy())
            write_pgm(out / f"{i:05d}_mask.pgm", s.gt_mask)
            writer.writerow([i] + [int(v) for v in s.label])
