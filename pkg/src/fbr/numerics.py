"""Shared tensor helpers, small math kernels and a finite-difference gradient checker.

Tensors are ``torch.Tensor`` objects in double precision; reverse-mode
differentiation comes from torch autograd. ``grad_check`` is the independent
oracle: it never looks at the autograd graph except to read the analytic
gradient it is checking.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .errors import ArgumentError, ContractError, DegenerateInputError

DTYPE = torch.float64
Tensor = torch.Tensor


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Build a double-precision tensor from array-like data."""
    t = torch.as_tensor(np.asarray(data, dtype=np.float64) if not isinstance(data, Tensor) else data,
                        dtype=DTYPE).clone()
    t.requires_grad_(requires_grad)
    return t


def _as_1d(v) -> tuple[Tensor, bool]:
    is_torch = isinstance(v, Tensor)
    t = v if is_torch else torch.as_tensor(np.asarray(v, dtype=np.float64))
    if t.dim() != 1:
        t = t.reshape(-1)
    return t, is_torch


def softmax(v):
    """Max-subtracted softmax of a vector; returns the same container kind it got."""
    t, is_torch = _as_1d(v)
    if t.numel() == 0:
        raise ArgumentError("softmax of an empty vector")
    if not torch.isfinite(t).all():
        raise ArgumentError("softmax input must be finite")
    shifted = t - t.max().detach()
    e = torch.exp(shifted)
    out = e / e.sum()
    return out if is_torch else out.numpy()


def cosine_sim(a, b) -> float | Tensor:
    """Cosine similarity of two non-zero vectors, clipped to [-1, 1]."""
    ta, is_torch = _as_1d(a)
    tb, _ = _as_1d(b)
    if ta.shape != tb.shape:
        raise ArgumentError(f"dimension mismatch: {tuple(ta.shape)} vs {tuple(tb.shape)}")
    na = torch.linalg.vector_norm(ta)
    nb = torch.linalg.vector_norm(tb)
    if float(na) == 0.0 or float(nb) == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    # the product is commutative in floating point, so the result is exactly symmetric
    val = torch.dot(ta, tb) / (na * nb)
    val = val.clamp(-1.0, 1.0)
    return val if is_torch else float(val)


def l2_normalize(x: Tensor, dim: int = -1, eps: float = 1e-12) -> Tensor:
    return x / torch.linalg.vector_norm(x, dim=dim, keepdim=True).clamp_min(eps)


@dataclass
class GradReport:
    max_rel_error: float
    worst_index: int
    analytic: float
    numeric: float
    worst_input: int = 0
    nonsmooth: list[int] = field(default_factory=list)

    @property
    def flags_nonsmooth(self) -> bool:
        return bool(self.nonsmooth)


def grad_check(loss_fn: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-4,
               kink_tol: float = 1e-2) -> GradReport:
    """Compare autograd gradients of ``loss_fn(*inputs)`` against central differences.

    The relative error per element is ``|a - n| / max(|a|, |n|, 1e-8)``. Elements
    where the forward and backward one-sided slopes disagree by more than
    ``kink_tol`` (relative to ``max(1, |n|)``) are reported in ``nonsmooth``;
    those are points where the loss is not differentiable.
    """
    if step <= 0:
        raise ArgumentError("step must be positive")
    xs = [x.detach().clone().to(DTYPE).requires_grad_(True) for x in inputs]
    out = loss_fn(*xs)
    if not isinstance(out, Tensor) or out.numel() != 1:
        raise ContractError("loss_fn must return a scalar tensor")
    grads = torch.autograd.grad(out.reshape(()), xs, allow_unused=True)
    analytic = [torch.zeros_like(x) if g is None else g.detach() for x, g in zip(xs, grads)]

    base = [x.detach().clone() for x in xs]
    worst = GradReport(0.0, 0, 0.0, 0.0)
    offset = 0
    with torch.no_grad():
        f0 = float(loss_fn(*base))
        for k, x in enumerate(base):
            flat = x.view(-1)
            a_flat = analytic[k].reshape(-1)
            for j in range(flat.numel()):
                orig = float(flat[j])
                flat[j] = orig + step
                fp = float(loss_fn(*base))
                flat[j] = orig - step
                fm = float(loss_fn(*base))
                flat[j] = orig
                num = (fp - fm) / (2.0 * step)
                fwd = (fp - f0) / step
                bwd = (f0 - fm) / step
                if abs(fwd - bwd) > kink_tol * max(1.0, abs(num)):
                    worst.nonsmooth.append(offset + j)
                ana = float(a_flat[j])
                rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
                if rel > worst.max_rel_error or offset + j == 0:
                    worst.max_rel_error = rel
                    worst.worst_index = offset + j
                    worst.worst_input = k
                    worst.analytic = ana
                    worst.numeric = num
            offset += flat.numel()
    return worst
