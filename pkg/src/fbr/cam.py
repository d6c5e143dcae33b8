"""Thresholded average pooling, the multi-label classification loss, CAMs and seeds."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ArgumentError
from .numerics import DTYPE, Tensor


@dataclass
class TapConfig:
    alpha_tap: float = 0.1
    bg_score: float = 0.3
    beta: float = 0.4

    def __post_init__(self):
        if not self.alpha_tap >= 0:
            raise ArgumentError("alpha_tap must be >= 0")
        if not 0 < self.bg_score < 1:
            raise ArgumentError("bg_score must lie in (0, 1)")
        if not 0 < self.beta < 1:
            raise ArgumentError("beta must lie in (0, 1)")


class ClassifierHead(nn.Module):
    """Bias-free linear classifier; ``theta`` has one row per foreground class."""

    def __init__(self, num_classes: int, feature_dim: int, rng_seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(int(rng_seed))
        bound = 1.0 / math.sqrt(feature_dim)
        init = (torch.rand(num_classes, feature_dim, generator=gen, dtype=DTYPE) * 2 - 1) * bound
        self.theta = nn.Parameter(init)

    @property
    def num_classes(self) -> int:
        return self.theta.shape[0]


@dataclass
class CamStack:
    """Per-pixel categorical scores over C foreground classes plus background.

    ``scores`` has the C+1 channels on axis -3 (background last). ``class_maps``
    keeps the rectified, max-normalized foreground maps from before the
    per-pixel renormalization; the query threshold and the background pseudo
    mask are read from those.
    """

    scores: Tensor
    class_maps: Tensor

    @property
    def num_classes(self) -> int:
        return self.class_maps.shape[-3]

    @property
    def bg_index(self) -> int:
        return self.num_classes + 1

    def detach(self) -> "CamStack":
        return CamStack(self.scores.detach(), self.class_maps.detach())


def _pool(f: Tensor, mask: Tensor) -> Tensor:
    count = mask.sum(dim=(-2, -1))
    total = (f * mask).sum(dim=(-2, -1))
    plain = f.sum(dim=(-2, -1)) / (f.shape[-1] * f.shape[-2])
    return torch.where(count > 0, total / count.clamp_min(1.0), plain)


def tap_pool(f: Tensor, alpha_tap: float) -> Tensor:
    """Per-channel mean over above-threshold values; plain mean if none qualify."""
    mask = (f.detach() > alpha_tap).to(f.dtype)
    return _pool(f, mask)


def gap_pool(f: Tensor) -> Tensor:
    return _pool(f, torch.ones_like(f))


def tap_scores(f: Tensor, head: ClassifierHead, alpha_tap: float = 0.1) -> Tensor:
    """Classification scores from TAP-pooled features; ``f`` is ``LxHxW`` or ``BxLxHxW``."""
    if f.shape[-3] != head.theta.shape[1]:
        raise ArgumentError(f"feature dim {f.shape[-3]} != classifier dim {head.theta.shape[1]}")
    pooled = tap_pool(f, alpha_tap)
    return pooled @ head.theta.T


def cls_loss(scores: Tensor, labels) -> Tensor:
    """Per-class binary cross-entropy on logistic-squashed scores, averaged."""
    y = torch.as_tensor(labels, dtype=DTYPE)
    if scores.shape != y.shape:
        raise ArgumentError(f"scores {tuple(scores.shape)} vs labels {tuple(y.shape)}")
    if not torch.all((y == 0) | (y == 1)):
        raise ArgumentError("labels must be binary")
    return F.binary_cross_entropy_with_logits(scores, y, reduction="mean")


def raw_cam(f: Tensor, head: ClassifierHead) -> Tensor:
    return torch.einsum("cl,...lhw->...chw", head.theta, f)


def make_cam(f: Tensor, head: ClassifierHead, labels, bg_score: float = 0.3) -> CamStack:
    """Build the C+1 channel CAM for one image (``LxHxW``) or a batch (``BxLxHxW``)."""
    y = torch.as_tensor(np.asarray(labels), dtype=DTYPE)
    if y.shape[-1] != head.num_classes:
        raise ArgumentError("label vector length differs from class count")
    if torch.any(y.reshape(-1, y.shape[-1]).sum(dim=-1) == 0):
        raise ArgumentError("at least one class must be present in every label vector")
    raw = F.relu(raw_cam(f, head))
    raw = raw * y[..., :, None, None]
    peak = raw.amax(dim=(-2, -1), keepdim=True).clamp_min(1e-12)
    class_maps = raw / peak
    bg = torch.full_like(class_maps[..., :1, :, :], float(bg_score))
    stacked = torch.cat([class_maps, bg], dim=-3)
    scores = stacked / stacked.sum(dim=-3, keepdim=True)
    return CamStack(scores, class_maps)


def seed_map(cam: CamStack) -> np.ndarray:
    """Per-pixel argmax; ties go to background, then to the lowest class index.

    Labels are 1..C for foreground and C+1 for background.
    """
    s = cam.scores.detach().cpu().numpy()
    c = cam.num_classes
    # background first so np.argmax's first-occurrence rule breaks ties toward it
    reordered = np.concatenate([s[..., c:, :, :], s[..., :c, :, :]], axis=-3)
    idx = np.argmax(reordered, axis=-3)
    return np.where(idx == 0, c + 1, idx).astype(np.int64)


def bg_pseudo_mask(cam: CamStack, tau_bg: float = 0.05) -> np.ndarray:
    """1 where the summed foreground activation is strictly below ``tau_bg``."""
    total = cam.class_maps.detach().sum(dim=-3).cpu().numpy()
    return (total < tau_bg).astype(np.float64)


def upsample_cam(cam: CamStack, size: tuple[int, int]) -> CamStack:
    """Bilinear resize of a batched CamStack; convex weights keep pixel sums at 1."""
    scores = F.interpolate(cam.scores, size=size, mode="bilinear", align_corners=False)
    maps = F.interpolate(cam.class_maps, size=size, mode="bilinear", align_corners=False)
    return CamStack(scores, maps)
