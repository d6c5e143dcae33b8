"""Small convolutional encoder, the two projection heads, and the weight checkpoint format."""
from __future__ import annotations

import math
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ArgumentError, CheckpointError
from .numerics import DTYPE, Tensor

MAGIC = b"FBRW1"


@dataclass
class EncoderConfig:
    in_channels: int = 3
    feature_dim: int = 64
    downsample_factor: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ArgumentError("feature_dim must be >= 1")
        if self.downsample_factor not in (1, 2, 4):
            raise ArgumentError("downsample_factor must be 1, 2 or 4")


def _uniform_fan_in_(weight: Tensor, fan_in: int, gen: torch.Generator) -> None:
    bound = math.sqrt(6.0 / fan_in)
    with torch.no_grad():
        weight.copy_((torch.rand(weight.shape, generator=gen, dtype=DTYPE) * 2.0 - 1.0) * bound)


class Encoder(nn.Module):
    """Three 3x3 conv blocks with ReLU; the stride schedule gives the downsampling."""

    def __init__(self, config: EncoderConfig | None = None):
        super().__init__()
        self.config = config or EncoderConfig()
        cfg = self.config
        strides = {1: (1, 1, 1), 2: (2, 1, 1), 4: (2, 2, 1)}[cfg.downsample_factor]
        widths = (cfg.in_channels, 32, 64, cfg.feature_dim)
        self.convs = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 3, stride=strides[i], padding=1, dtype=DTYPE)
            for i in range(3)
        )
        gen = torch.Generator().manual_seed(int(cfg.rng_seed))
        for conv in self.convs:
            _uniform_fan_in_(conv.weight, conv.in_channels * 9, gen)
            nn.init.zeros_(conv.bias)

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = F.relu(conv(x))
        return x


def encode(image: Tensor, encoder: Encoder) -> Tensor:
    """Map ``3xHxW`` (or a ``Bx3xHxW`` batch) to features at 1/downsample resolution."""
    factor = encoder.config.downsample_factor
    h, w = image.shape[-2:]
    if h % factor or w % factor:
        raise ArgumentError(f"spatial extents {h}x{w} not divisible by {factor}")
    if image.dim() == 3:
        return encoder(image.unsqueeze(0).to(DTYPE))[0]
    return encoder(image.to(DTYPE))


class ProjectionHead(nn.Module):
    """Per-pixel affine map followed by ReLU (a 1x1 convolution)."""

    def __init__(self, in_dim: int, out_dim: int = 128, rng_seed: int = 0):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_dim, in_dim, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(out_dim, dtype=DTYPE))
        gen = torch.Generator().manual_seed(int(rng_seed))
        _uniform_fan_in_(self.weight, in_dim, gen)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def forward(self, f: Tensor) -> Tensor:
        return project(f, self)


def project(f: Tensor, head: ProjectionHead) -> Tensor:
    """Project ``LxHxW`` or ``BxLxHxW`` features to ``D`` channels, keeping H and W."""
    ch_dim = f.dim() - 3
    if f.shape[ch_dim] != head.in_dim:
        raise ArgumentError(f"head expects {head.in_dim} channels, got {f.shape[ch_dim]}")
    z = torch.einsum("dl,...lhw->...dhw", head.weight, f)
    z = z + head.bias.view(-1, 1, 1)
    return F.relu(z)


def save_weights(path, module: nn.Module) -> None:
    """Write every named parameter as a flat little-endian binary record."""
    chunks = [MAGIC]
    for name, p in module.named_parameters():
        raw = name.encode("utf-8")
        arr = p.detach().cpu().numpy().astype("<f8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def read_weights(path) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if not buf.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic, not an FBRW1 checkpoint")
    pos = len(MAGIC)
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    return out


def load_weights(path, module: nn.Module) -> None:
    stored = read_weights(path)
    params = dict(module.named_parameters())
    if set(stored) != set(params):
        missing = sorted(set(params) - set(stored))
        extra = sorted(set(stored) - set(params))
        raise CheckpointError(f"parameter mismatch: missing={missing} unexpected={extra}")
    with torch.no_grad():
        for name, arr in stored.items():
            if tuple(params[name].shape) != arr.shape:
                raise CheckpointError(f"shape mismatch for {name}")
            params[name].copy_(torch.from_numpy(arr.copy()))
