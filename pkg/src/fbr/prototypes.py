"""Foreground prototypes from top-scoring CAM pixels and uncertain-pixel query selection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ClassAbsentError, DegenerateInputError, ArgumentError
from .numerics import Tensor, l2_normalize

NORM_EPS = 1e-12


@dataclass
class Prototype:
    class_id: int
    vector: Tensor
    support: int
    pixel_index: np.ndarray = field(repr=False, default=None)


@dataclass
class QuerySet:
    class_id: int
    vectors: Tensor
    pixel_coords: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.vectors.shape[0]


def flatten_pixels(z: Tensor) -> Tensor:
    """``DxHxW`` -> ``(HW)xD``; ``BxDxHxW`` -> ``(BHW)xD``."""
    if z.dim() == 3:
        return z.permute(1, 2, 0).reshape(-1, z.shape[0])
    if z.dim() == 4:
        return z.permute(0, 2, 3, 1).reshape(-1, z.shape[1])
    raise ArgumentError(f"expected a 3-D or 4-D feature tensor, got {z.dim()}-D")


def _pixel_coords(shape: tuple, flat_idx: np.ndarray) -> list:
    return [tuple(int(v) for v in np.unravel_index(i, shape)) for i in flat_idx]


def compute_prototype(class_map: Tensor, z_fg: Tensor, n_top: int = 32, class_id: int = 1) -> Prototype:
    """CAM-weighted mean of the top ``n_top`` pixels of ``class_map``, unit-normalized.

    ``class_map`` is ``HxW`` (or ``BxHxW`` to pool a class over a batch) and
    ``z_fg`` the matching ``DxHxW`` (or ``BxDxHxW``) projected features.
    Selection is a hard, non-differentiable choice; the weights and features
    carry gradients.
    """
    scores = class_map.reshape(-1)
    feats = flatten_pixels(z_fg)
    if scores.shape[0] != feats.shape[0]:
        raise ArgumentError("class map and features are not spatially aligned")
    s_np = scores.detach().cpu().numpy()
    available = int((s_np > 0).sum())
    if available == 0:
        raise ClassAbsentError(f"class {class_id} has no positive activation")
    k = min(int(n_top), available)
    order = np.argsort(-s_np, kind="stable")[:k]
    idx = torch.as_tensor(order)
    w = scores[idx]
    pooled = (w[:, None] * feats[idx]).sum(dim=0) / w.sum()
    if float(torch.linalg.vector_norm(pooled.detach())) < NORM_EPS:
        raise DegenerateInputError(f"class {class_id} prototype has zero norm")
    return Prototype(class_id, l2_normalize(pooled), k, order)


def select_queries(seeds: np.ndarray, class_map: Tensor, z_fg: Tensor, class_id: int,
                   beta: float = 0.4) -> QuerySet:
    """Pixels seeded as ``class_id`` whose activation is below ``beta``, unit-normalized.

    Both indicators are stop-gradient masks. Pixels whose feature vector is
    exactly zero cannot be normalized and are left out.
    """
    seeds = np.asarray(seeds)
    cm = class_map.detach().cpu().numpy()
    if seeds.shape != cm.shape:
        raise ArgumentError(f"seed map {seeds.shape} vs class map {cm.shape}")
    feats = flatten_pixels(z_fg)
    chosen = np.flatnonzero(((seeds == class_id) & (cm < beta)).reshape(-1))
    if chosen.size:
        norms = torch.linalg.vector_norm(feats.detach()[torch.as_tensor(chosen)], dim=1).numpy()
        chosen = chosen[norms >= NORM_EPS]
    if chosen.size == 0:
        return QuerySet(class_id, feats.new_zeros((0, feats.shape[1])), [])
    vecs = l2_normalize(feats[torch.as_tensor(chosen)])
    return QuerySet(class_id, vecs, _pixel_coords(seeds.shape, chosen))
