"""Command-line entry point.

Exit codes: 0 success, 2 user or configuration error, 3 environment or IO error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import torch

from .cam import make_cam, seed_map
from .config import ConfigError, RunConfig, RunManifest
from .encoder import load_weights, save_weights
from .errors import FBRError
from .evaluate import evaluate_dataset
from .netpbm import write_pgm
from .plotting import plot_boundary_curves, plot_seed_panels
from .synthdata import dump, generate
from .trainer import FBRModel, collate, infer_seeds, train

log = logging.getLogger("fbr")

EXIT_OK, EXIT_USER, EXIT_IO = 0, 2, 3
WEIGHTS = "weights.fbrw"
EMBED_STRIDE = 2


def _threads() -> None:
    n = os.environ.get("FBR_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))


def _load_run(ckpt: Path, manifest: str | None) -> RunConfig:
    path = Path(manifest) if manifest else ckpt.parent / "manifest.json"
    if path.exists():
        return RunManifest.read(path).run_config()
    log.warning("no manifest at %s; using default configuration", path)
    return RunConfig()


def _load_model(ckpt: Path, run: RunConfig) -> FBRModel:
    model = FBRModel(run.data.num_classes, run.encoder, run.train.proj_dim)
    load_weights(ckpt, model)
    return model


def evaluate_model(model: FBRModel, run: RunConfig, split: str, out: Path | None = None):
    samples = generate(run.data, split)
    seeds = infer_seeds(samples, model, run.train.tap)
    report = evaluate_dataset(seeds, [s.gt_mask for s in samples], run.data.num_classes)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        report.write_json(out / "metrics.json")
        report.write_curves(out)
        seed_dir = out / "seeds"
        seed_dir.mkdir(exist_ok=True)
        for i, s in enumerate(seeds):
            write_pgm(seed_dir / f"{split}_{i:05d}.pgm", s)
        plot_boundary_curves(report, out / "boundary_curves.png")
        plot_seed_panels(samples, seeds, run.data.num_classes, out / "seed_panels.png")
    return report, seeds, samples


def cmd_train(args) -> int:
    run = RunConfig.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = generate(run.data, "train")
    with open(out / "train_log.jsonl", "w") as fh:
        state, _ = train(samples, run.train, run.data.num_classes, log=fh, encoder_config=run.encoder)
    save_weights(out / WEIGHTS, state.model)
    report, _, _ = evaluate_model(state.model, run, "val")
    report.write_json(out / "metrics.json")
    artifacts = {"checkpoint": WEIGHTS, "log": "train_log.jsonl", "metrics": "metrics.json"}
    RunManifest.for_run(run, artifacts).write(out / "manifest.json")
    log.info("trained %d steps, val seed mIoU %.4f", run.train.steps, report.miou)
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.ckpt)
    run = _load_run(ckpt, args.manifest)
    model = _load_model(ckpt, run)
    report, _, _ = evaluate_model(model, run, args.split, Path(args.out))
    log.info("%s seed mIoU %.4f", args.split, report.miou)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    run = RunConfig.load(args.config)
    for split in ("train", "val"):
        dump(generate(run.data, split), Path(args.out) / split)
    return EXIT_OK


@torch.no_grad()
def export_embeddings(model: FBRModel, run: RunConfig, split: str, out_csv, stride: int = EMBED_STRIDE) -> int:
    """Write projected foreground features on a regular pixel grid; returns the row count."""
    samples = generate(run.data, split)
    model.eval()
    rows = 0
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        dim = model.head_fg.out_dim
        writer.writerow(["image", "row", "col", "label"] + [f"f{d}" for d in range(dim)])
        for start in range(0, len(samples), 32):
            batch = samples[start:start + 32]
            x, y = collate(batch)
            f = model.encoder(x)
            seeds = seed_map(make_cam(f, model.classifier, y, run.train.tap.bg_score))
            z = model.head_fg(f).numpy()
            for b in range(len(batch)):
                for r in range(0, z.shape[2], stride):
                    for c in range(0, z.shape[3], stride):
                        writer.writerow([start + b, r, c, int(seeds[b, r, c])]
                                        + [repr(float(v)) for v in z[b, :, r, c]])
                        rows += 1
    return rows


def cmd_export_emb(args) -> int:
    ckpt = Path(args.ckpt)
    run = _load_run(ckpt, args.manifest)
    model = _load_model(ckpt, run)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    export_embeddings(model, run, args.split, args.out, args.stride)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="generate data, train, write checkpoint/log/manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="seed metrics, curves, seed PGMs and figures")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="val", choices=("train", "val"))
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None, help="defaults to manifest.json next to the checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-data", help="dump the synthetic dataset as PPM/PGM/CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("export-emb", help="export projected pixel embeddings as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val", choices=("train", "val"))
    p.add_argument("--stride", type=int, default=EMBED_STRIDE)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_export_emb)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _threads()
    try:
        return args.func(args)
    except (ConfigError, FBRError, json.JSONDecodeError) as exc:
        print(f"fbr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except OSError as exc:
        print(f"fbr {args.command}: io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
