"""Prototype contrastive loss, the two contrastive terms, background segmentation and the total."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import (ArgumentError, ContractError, EmptyBankError, EmptyPoolError,
                     InsufficientClassesError)
from .nroi import NroiBank
from .numerics import DTYPE, Tensor
from .prototypes import Prototype, QuerySet
from .sampler import NegativePool, build_graph, negative_distribution, sample_fg_negatives

UNIT_TOL = 1e-6


@dataclass
class LossConfig:
    tau_bg: float = 0.5
    tau_fg: float = 0.1
    lambda1: float = 0.1
    lambda2: float = 0.01
    alpha_seg: float = 0.01
    num_negatives: int = 256

    def __post_init__(self):
        for name in ("tau_bg", "tau_fg", "lambda1", "lambda2", "alpha_seg"):
            if not getattr(self, name) > 0:
                raise ArgumentError(f"{name} must be positive")
        if self.num_negatives < 1:
            raise ArgumentError("num_negatives must be >= 1")


@dataclass
class LossBreakdown:
    cls: float
    fb: float
    ifg: float
    seg: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def _as_vectors(x) -> Tensor:
    if isinstance(x, Prototype):
        return x.vector
    if isinstance(x, QuerySet):
        return x.vectors
    return torch.as_tensor(x, dtype=DTYPE) if not isinstance(x, Tensor) else x


def _by_class(items) -> dict[int, Tensor]:
    if isinstance(items, Mapping):
        return {int(c): _as_vectors(v) for c, v in items.items()}
    return {int(it.class_id): _as_vectors(it) for it in items}


def _check_unit(name: str, v: Tensor) -> None:
    if v.numel() == 0:
        return
    norms = torch.linalg.vector_norm(v.detach(), dim=-1)
    if torch.any((norms - 1.0).abs() > UNIT_TOL):
        raise ContractError(f"{name} vectors must be unit-normalized")


def pcl(prototypes, queries, negatives, tau: float, reduction: str = "mean") -> Tensor:
    """Prototype contrastive loss.

    ``prototypes`` and ``queries`` map class id to a ``D`` vector and a ``QxD``
    matrix (``Prototype``/``QuerySet`` lists are accepted too). ``negatives``
    is either one ``MxD`` matrix shared by all classes or a mapping from class
    id to its own matrix. With ``reduction="mean"`` the sum over all queries is
    divided by the query count.
    """
    if not tau > 0:
        raise ArgumentError("temperature must be positive")
    protos = _by_class(prototypes)
    qs = _by_class(queries)
    shared = None if isinstance(negatives, Mapping) else _as_vectors(negatives)
    negs = None if shared is not None else {int(c): _as_vectors(v) for c, v in negatives.items()}
    total = torch.zeros((), dtype=DTYPE)
    count = 0
    for c, q in qs.items():
        if q.shape[0] == 0:
            continue
        if c not in protos:
            raise ArgumentError(f"queries for class {c} have no prototype")
        p = protos[c]
        zn = shared if shared is not None else negs.get(c)
        if zn is None or zn.shape[0] == 0:
            raise ArgumentError(f"no negatives for class {c}")
        _check_unit("query", q)
        _check_unit("prototype", p)
        _check_unit("negative", zn)
        pos = (q @ p) / tau
        neg = (q @ zn.T) / tau
        logits = torch.cat([pos[:, None], neg], dim=1)
        total = total + (torch.logsumexp(logits, dim=1) - pos).sum()
        count += q.shape[0]
    if reduction == "mean" and count:
        total = total / count
    return total


def _query_count(queries) -> int:
    return sum(int(v.shape[0]) for v in _by_class(queries).values())


def fb_loss(prototypes, queries, bank: NroiBank, cfg: LossConfig,
            rng: np.random.Generator) -> tuple[Tensor, str | None]:
    """Queries against NROIs drawn from the bank; returns ``(loss, skip_reason)``."""
    zero = torch.zeros((), dtype=DTYPE)
    if len(bank) == 0:
        return zero, "empty_bank"
    qs = {c: q for c, q in _by_class(queries).items() if q.shape[0]}
    if not qs:
        return zero, "no_queries"
    negs = {}
    for c in sorted(qs):
        try:
            negs[c] = torch.as_tensor(bank.sample(cfg.num_negatives, rng), dtype=DTYPE)
        except EmptyBankError:
            return zero, "empty_bank"
    return pcl(prototypes, qs, negs, cfg.tau_bg), None


def if_loss(prototypes, queries, pool: NegativePool, cfg: LossConfig,
            rng: np.random.Generator) -> tuple[Tensor, str | None]:
    """Queries against actively sampled foreground keys; returns ``(loss, skip_reason)``."""
    zero = torch.zeros((), dtype=DTYPE)
    protos = list(prototypes.values()) if isinstance(prototypes, Mapping) else list(prototypes)
    try:
        graph = build_graph(protos)
    except InsufficientClassesError:
        return zero, "single_class"
    qs = {c: q for c, q in _by_class(queries).items() if q.shape[0]}
    negs = {}
    for c in sorted(qs):
        if c not in graph.present:
            continue
        try:
            keys, _ = sample_fg_negatives(pool.for_query(c), negative_distribution(graph, c),
                                          cfg.num_negatives, rng)
        except (EmptyPoolError, InsufficientClassesError):
            continue
        negs[c] = torch.as_tensor(keys, dtype=DTYPE)
    if not negs:
        return zero, "empty_pool" if qs else "no_queries"
    return pcl(prototypes, {c: qs[c] for c in negs}, negs, cfg.tau_fg), None


class SegHead(nn.Module):
    """Per-channel weight plus bias on batch-normalized features, then a logistic."""

    def __init__(self, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(1, dtype=DTYPE))

    def forward(self, z_bg: Tensor) -> Tensor:
        """Background logits, ``BxHxW`` (or ``HxW`` for an unbatched input)."""
        single = z_bg.dim() == 3
        z = z_bg[None] if single else z_bg
        z = F.batch_norm(z, None, None, training=True, eps=1e-5)
        logits = torch.einsum("d,bdhw->bhw", self.weight, z) + self.bias
        return logits[0] if single else logits


def binary_cross_entropy(pred, target, eps: float = 1e-12) -> Tensor:
    p = torch.as_tensor(pred, dtype=DTYPE).clamp(eps, 1.0 - eps)
    t = torch.as_tensor(target, dtype=DTYPE)
    return -(t * torch.log(p) + (1 - t) * torch.log1p(-p)).mean()


def bg_seg_loss(z_bg: Tensor, mask, seg_head: SegHead) -> Tensor:
    target = torch.as_tensor(np.asarray(mask), dtype=DTYPE)
    logits = seg_head(z_bg)
    if logits.shape != target.shape:
        raise ArgumentError(f"mask {tuple(target.shape)} vs prediction {tuple(logits.shape)}")
    return F.binary_cross_entropy_with_logits(logits, target)


def weighted_total(cls, fb, ifg, seg, cfg: LossConfig):
    return cls + cfg.lambda1 * fb + cfg.lambda2 * ifg + cfg.alpha_seg * seg


def total_loss(parts: Mapping, cfg: LossConfig) -> LossBreakdown:
    """Weighted sum of the loss parts; missing or ``None`` parts count as zero."""
    vals = {k: float(parts.get(k) or 0.0) for k in ("cls", "fb", "ifg", "seg")}
    for k, v in vals.items():
        if not np.isfinite(v):
            raise ArgumentError(f"loss part {k} is not finite")
    return LossBreakdown(**vals, total=weighted_total(vals["cls"], vals["fb"], vals["ifg"], vals["seg"], cfg))
