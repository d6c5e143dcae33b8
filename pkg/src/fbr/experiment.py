"""Baseline / +FB / full ablation on the synthetic co-occurrence data."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .encoder import EncoderConfig
from .evaluate import cooccurrence_fpr, evaluate_dataset
from .synthdata import SynthConfig, generate
from .trainer import TrainConfig, infer_seeds, stream_seed, train

VARIANTS = {
    "baseline": dict(enable_fb=False, enable_if=False, enable_seg=False),
    "+FB": dict(enable_fb=True, enable_if=False, enable_seg=False),
    "full": dict(enable_fb=True, enable_if=True, enable_seg=True),
}


@dataclass
class AblationResult:
    miou: dict = field(default_factory=dict)
    fpr: dict = field(default_factory=dict)
    seconds: float = 0.0

    def mean(self, name: str) -> float:
        return float(np.mean(self.miou[name]))

    def mean_fpr(self, name: str) -> float:
        return float(np.mean(self.fpr[name]))


def run_variant(root_seed: int, flags: dict, steps: int, learning_rate: float,
                data: SynthConfig | None = None) -> tuple[float, float]:
    data = data or SynthConfig()
    data = replace(data, rng_seed=stream_seed(root_seed, "data") % (2 ** 31))
    train_set, val_set = generate(data, "train"), generate(data, "val")
    cfg = TrainConfig(steps=steps, learning_rate=learning_rate, rng_seed=root_seed, **flags)
    enc = EncoderConfig(rng_seed=stream_seed(root_seed, "init") % (2 ** 31))
    state, _ = train(train_set, cfg, data.num_classes, encoder_config=enc)
    seeds = infer_seeds(val_set, state.model, cfg.tap)
    report = evaluate_dataset(seeds, [s.gt_mask for s in val_set], data.num_classes, widths=())
    return report.miou, cooccurrence_fpr(seeds, val_set, data)


def run_ablation(root_seeds=(0, 1, 2, 3, 4), steps: int = 1000, learning_rate: float = 0.1,
                 variants=VARIANTS, progress=None) -> AblationResult:
    res = AblationResult({k: [] for k in variants}, {k: [] for k in variants})
    t0 = time.perf_counter()
    for seed in root_seeds:
        for name, flags in variants.items():
            m, f = run_variant(seed, flags, steps, learning_rate)
            res.miou[name].append(m)
            res.fpr[name].append(f)
            if progress:
                progress(f"seed={seed} {name}: miou={m:.4f} fpr={f:.4f}")
    res.seconds = time.perf_counter() - t0
    return res
