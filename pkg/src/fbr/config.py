"""JSON run configuration: parsing with strict keys, defaults and the run manifest."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .cam import TapConfig
from .encoder import EncoderConfig
from .errors import ArgumentError, FBRError
from .losses import LossConfig
from .synthdata import SynthConfig
from .trainer import STREAMS, TrainConfig, stream_seed


class ConfigError(FBRError, ValueError):
    pass


def _build(cls, raw, where: str, nested: dict | None = None, exclude=()):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)} - set(exclude)
    for key in raw:
        if key not in names:
            raise ConfigError(f"{where}: unknown key {key!r}")
    kwargs = dict(raw)
    for key, sub in (nested or {}).items():
        kwargs[key] = _build(sub, raw.get(key), f"{where}.{key}")
    try:
        return cls(**kwargs)
    except (ArgumentError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class RunConfig:
    seed: int = 0
    data: SynthConfig = field(default_factory=SynthConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        allowed = {"seed", "data", "encoder", "train"}
        for key in raw:
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r}")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed must be an integer")
        data_raw = dict(raw.get("data") or {})
        data_raw.setdefault("rng_seed", stream_seed(seed, "data") % (2 ** 31))
        enc_raw = dict(raw.get("encoder") or {})
        enc_raw.setdefault("rng_seed", stream_seed(seed, "init") % (2 ** 31))
        train_raw = raw.get("train") or {}
        if isinstance(train_raw, dict) and "rng_seed" in train_raw:
            raise ConfigError("train.rng_seed is derived from the top-level 'seed'")
        data = _build(SynthConfig, data_raw, "data")
        enc = _build(EncoderConfig, enc_raw, "encoder")
        train = _build(TrainConfig, train_raw, "train", nested={"loss": LossConfig, "tap": TapConfig},
                       exclude=("rng_seed",))
        train.rng_seed = seed
        return cls(seed, data, enc, train)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if isinstance(raw, dict) and {"config", "seeds", "artifacts"} <= raw.keys():
            raw = raw["config"]  # a run manifest replays its snapshot
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["data"]["image_size"] = list(self.data.image_size)
        d["train"].pop("rng_seed")
        return d


@dataclass
class RunManifest:
    config: dict
    seeds: dict
    artifacts: dict
    version: str = __version__

    @classmethod
    def for_run(cls, run: RunConfig, artifacts: dict) -> "RunManifest":
        seeds = {"root": run.seed, "data": run.data.rng_seed, "init": run.encoder.rng_seed}
        seeds.update({name: stream_seed(run.seed, name) for name in STREAMS if name not in seeds})
        return cls(run.to_dict(), seeds, {k: str(v) for k, v in artifacts.items()})

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        raw = json.loads(Path(path).read_text())
        return cls(raw["config"], raw["seeds"], raw["artifacts"], raw.get("version", "unknown"))

    def run_config(self) -> RunConfig:
        return RunConfig.from_dict(self.config)
