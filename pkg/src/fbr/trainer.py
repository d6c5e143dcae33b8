"""Training step and loop wiring the encoder, CAMs, both contrastive terms and the seg term."""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .cam import (ClassifierHead, TapConfig, bg_pseudo_mask, cls_loss, make_cam, seed_map,
                  tap_scores, upsample_cam)
from .encoder import Encoder, EncoderConfig, ProjectionHead
from .errors import ArgumentError, ClassAbsentError, DegenerateInputError, EmptyBackgroundError
from .losses import (LossBreakdown, LossConfig, SegHead, bg_seg_loss, fb_loss, if_loss,
                     total_loss, weighted_total)
from .nroi import NroiBank, extract_nrois
from .numerics import DTYPE
from .prototypes import compute_prototype, select_queries
from .sampler import build_negative_pool
from .synthdata import Sample

STREAMS = ("data", "init", "clustering", "sampling", "batching")


def substream(root_seed: int, name: str) -> np.random.SeedSequence:
    """Named child seed of ``root_seed``; stable across processes and versions."""
    return np.random.SeedSequence([int(root_seed), zlib.crc32(name.encode())])


def stream_seed(root_seed: int, name: str) -> int:
    return int(substream(root_seed, name).generate_state(1)[0])


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 8
    learning_rate: float = 0.01
    loss: LossConfig = field(default_factory=LossConfig)
    tap: TapConfig = field(default_factory=TapConfig)
    N_prototype: int = 32
    K: int = 8
    bank_capacity: int = 50_000
    rng_seed: int = 0
    enable_fb: bool = True
    enable_if: bool = True
    enable_seg: bool = True
    proj_dim: int = 128
    tau_mask: float = 0.05

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if isinstance(self.tap, dict):
            self.tap = TapConfig(**self.tap)
        for name in ("steps", "batch_size", "N_prototype", "K", "bank_capacity", "proj_dim"):
            if int(getattr(self, name)) < 1:
                raise ArgumentError(f"{name} must be a positive count")
        if not self.learning_rate > 0:
            raise ArgumentError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class FBRModel(nn.Module):
    def __init__(self, num_classes: int, encoder_config: EncoderConfig, proj_dim: int = 128):
        super().__init__()
        seed = encoder_config.rng_seed
        self.encoder = Encoder(encoder_config)
        dim = encoder_config.feature_dim
        self.classifier = ClassifierHead(num_classes, dim, rng_seed=seed + 1)
        self.head_fg = ProjectionHead(dim, proj_dim, rng_seed=seed + 2)
        self.head_bg = ProjectionHead(dim, proj_dim, rng_seed=seed + 3)
        self.seg_head = SegHead(proj_dim)

    @property
    def num_classes(self) -> int:
        return self.classifier.num_classes

    def inference_parameters(self) -> list[nn.Parameter]:
        """Parameters kept at inference; the heads are training-only."""
        return list(self.encoder.parameters()) + list(self.classifier.parameters())


@dataclass
class TrainState:
    model: FBRModel
    optimizer: torch.optim.Optimizer
    bank: NroiBank
    rngs: dict
    step: int = 0


@dataclass
class StepTrace:
    step: int
    losses: LossBreakdown
    fb_skip: str | None
    if_skip: str | None
    seg_skip: str | None
    bank_occupancy: int
    present_classes: list
    num_queries: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["losses"] = self.losses.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def init_state(num_classes: int, config: TrainConfig, encoder_config: EncoderConfig | None = None) -> TrainState:
    enc = encoder_config or EncoderConfig(rng_seed=stream_seed(config.rng_seed, "init") % (2 ** 31))
    model = FBRModel(num_classes, enc, config.proj_dim)
    opt = torch.optim.SGD(model.parameters(), lr=config.learning_rate, momentum=0.0, weight_decay=0.0)
    rngs = {name: np.random.default_rng(substream(config.rng_seed, name))
            for name in ("clustering", "sampling", "batching")}
    return TrainState(model, opt, NroiBank(config.bank_capacity, config.proj_dim), rngs)


def collate(batch: list[Sample]) -> tuple[torch.Tensor, np.ndarray]:
    x = torch.stack([s.image for s in batch]).to(DTYPE)
    y = np.stack([s.label for s in batch])
    return x, y


def _prototypes_and_queries(cam, seeds, z_fg, present, config: TrainConfig):
    prototypes, queries = {}, {}
    for c in present:
        cmap = cam.class_maps[:, c - 1]
        try:
            prototypes[c] = compute_prototype(cmap, z_fg, config.N_prototype, class_id=c)
        except (ClassAbsentError, DegenerateInputError):
            continue
        queries[c] = select_queries(seeds, cmap, z_fg, c, config.tap.beta)
    return prototypes, queries


def train_step(batch: list[Sample], state: TrainState, config: TrainConfig) -> StepTrace:
    """One optimization step over ``batch``; degenerate sub-steps contribute exact zeros."""
    model = state.model
    model.train()
    x, y = collate(batch)
    bg_label = model.num_classes + 1
    zero = torch.zeros((), dtype=DTYPE)

    f = model.encoder(x)
    l_cls = cls_loss(tap_scores(f, model.classifier, config.tap.alpha_tap), y)
    cam = make_cam(f, model.classifier, y, config.tap.bg_score)
    seeds = seed_map(cam)
    present = [int(c) + 1 for c in np.flatnonzero(y.any(axis=0))]

    l_fb, l_if, l_seg = zero, zero, zero
    fb_skip = None if config.enable_fb else "disabled"
    if_skip = None if config.enable_if else "disabled"
    seg_skip = None if config.enable_seg else "disabled"
    n_queries = 0
    nrois = []

    if config.enable_fb or config.enable_if:
        z_fg = model.head_fg(f)
        prototypes, queries = _prototypes_and_queries(cam, seeds, z_fg, present, config)
        n_queries = sum(len(q) for q in queries.values())
        if config.enable_fb:
            l_fb, fb_skip = fb_loss(prototypes, queries, state.bank, config.loss, state.rngs["sampling"])
        if config.enable_if:
            pool = build_negative_pool(seeds, z_fg, bg_label)
            l_if, if_skip = if_loss(prototypes, queries, pool, config.loss, state.rngs["sampling"])

    if config.enable_fb or config.enable_seg:
        z_bg = model.head_bg(f)
        if config.enable_fb:
            for b in range(x.shape[0]):
                try:
                    res = extract_nrois(z_bg[b], seeds[b], bg_label, config.K, state.rngs["clustering"])
                except EmptyBackgroundError:
                    continue
                nrois.append(res.centroids)
        if config.enable_seg:
            l_seg = bg_seg_loss(z_bg, bg_pseudo_mask(cam, config.tau_mask), model.seg_head)

    total = weighted_total(l_cls, l_fb, l_if, l_seg, config.loss)
    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    state.optimizer.step()
    # the bank is updated only after this step's negatives were drawn
    for centroids in nrois:
        state.bank.push(centroids)

    parts = {"cls": l_cls.item(), "fb": l_fb.item(), "ifg": l_if.item(), "seg": l_seg.item()}
    breakdown = total_loss(parts, config.loss)
    trace = StepTrace(state.step, breakdown, fb_skip, if_skip, seg_skip, len(state.bank), present, n_queries)
    state.step += 1
    return trace


def batches(samples: list[Sample], batch_size: int, rng: np.random.Generator):
    """Endless shuffled mini-batches, reshuffled every epoch."""
    while True:
        order = rng.permutation(len(samples))
        for start in range(0, len(order) - batch_size + 1, batch_size):
            yield [samples[i] for i in order[start:start + batch_size]]


def train(samples: list[Sample], config: TrainConfig, num_classes: int, state: TrainState | None = None,
          log=None, encoder_config: EncoderConfig | None = None) -> tuple[TrainState, list[StepTrace]]:
    """Run ``config.steps`` steps; ``log`` (a text file handle) receives one JSON line per step."""
    state = state or init_state(num_classes, config, encoder_config)
    if len(samples) < config.batch_size:
        raise ArgumentError("fewer samples than one batch")
    feed = batches(samples, config.batch_size, state.rngs["batching"])
    traces = []
    for _ in range(config.steps):
        trace = train_step(next(feed), state, config)
        traces.append(trace)
        if log is not None:
            log.write(trace.to_json() + "\n")
    return state, traces


@torch.no_grad()
def infer_cams(samples: list[Sample], model: FBRModel, tap: TapConfig, batch_size: int = 32,
               full_resolution: bool = True):
    model.eval()
    out = []
    for start in range(0, len(samples), batch_size):
        x, y = collate(samples[start:start + batch_size])
        cam = make_cam(model.encoder(x), model.classifier, y, tap.bg_score)
        if full_resolution:
            cam = upsample_cam(cam, tuple(x.shape[-2:]))
        out.append(cam)
    return out


@torch.no_grad()
def infer_seeds(samples: list[Sample], model: FBRModel, tap: TapConfig, batch_size: int = 32,
                full_resolution: bool = True) -> list[np.ndarray]:
    """Seeds from encoder + classifier only; projection heads, bank and seg head are unused."""
    seeds = []
    for cam in infer_cams(samples, model, tap, batch_size, full_resolution):
        seeds.extend(list(seed_map(cam)))
    return seeds
