"""Semantic graph over foreground prototypes and active negative sampling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, EmptyPoolError, InsufficientClassesError
from .numerics import cosine_sim, softmax
from .prototypes import NORM_EPS, Prototype


@dataclass
class SemanticGraph:
    """``sims[i-1, j-1]`` holds the prototype cosine of classes i and j; NaN elsewhere."""

    sims: np.ndarray
    present: list[int]

    def row(self, c: int) -> tuple[list[int], np.ndarray]:
        if c not in self.present:
            raise ArgumentError(f"class {c} is not a graph node")
        others = [j for j in self.present if j != c]
        return others, np.array([self.sims[c - 1, j - 1] for j in others])


@dataclass
class NegativePool:
    """Normalized foreground pixel features grouped by seed label."""

    features: dict[int, np.ndarray] = field(default_factory=dict)
    query_class: int | None = None

    def for_query(self, c: int) -> "NegativePool":
        return NegativePool({j: v for j, v in self.features.items() if j != c}, c)


def build_graph(prototypes: list[Prototype], num_classes: int | None = None) -> SemanticGraph:
    """Pairwise prototype cosine similarities; background is never a node."""
    if len(prototypes) < 2:
        raise InsufficientClassesError("semantic graph needs at least two classes")
    ids = [p.class_id for p in prototypes]
    size = num_classes or max(ids)
    sims = np.full((size, size), np.nan)
    vecs = {p.class_id: p.vector.detach().cpu().numpy() for p in prototypes}
    for a in ids:
        for b in ids:
            if a < b:
                sims[a - 1, b - 1] = sims[b - 1, a - 1] = cosine_sim(vecs[a], vecs[b])
    return SemanticGraph(sims, sorted(ids))


def negative_distribution(graph: SemanticGraph, c: int) -> tuple[list[int], np.ndarray]:
    """Softmax over class ``c``'s similarities to every other present class."""
    others, row = graph.row(c)
    if not others:
        raise InsufficientClassesError(f"class {c} has no negative classes")
    return others, softmax(row)


def build_negative_pool(seeds: np.ndarray, z_fg, bg_label: int) -> NegativePool:
    """Group foreground pixels of ``z_fg`` (``DxHxW`` or ``BxDxHxW``) by seed label."""
    z = z_fg.detach().cpu().numpy() if hasattr(z_fg, "detach") else np.asarray(z_fg)
    if z.ndim == 3:
        z = z[None]
        seeds = np.asarray(seeds)[None]
    flat = np.moveaxis(z, 1, -1).reshape(-1, z.shape[1])
    labels = np.asarray(seeds).reshape(-1)
    pool = {}
    for j in np.unique(labels):
        if j == bg_label:
            continue
        v = flat[labels == j]
        n = np.linalg.norm(v, axis=1, keepdims=True)
        keep = n[:, 0] >= NORM_EPS
        pool[int(j)] = v[keep] / n[keep]
    return NegativePool(pool)


def quota(probs: np.ndarray, m: int) -> np.ndarray:
    """Largest-remainder apportionment of ``m`` draws; ties favor the earlier class."""
    p = np.asarray(probs, dtype=np.float64)
    raw = p * m
    counts = np.floor(raw).astype(np.int64)
    short = m - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def sample_fg_negatives(pool: NegativePool, dist: tuple[list[int], np.ndarray], m: int = 256,
                        rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``m`` negative keys following ``dist`` over negative classes.

    Each class gets a deterministic quota; inside a class pixels are drawn
    uniformly with replacement. Mass of classes without pixels is spread over
    the rest. Returns the keys and the seed label of each key.
    """
    rng = rng if rng is not None else np.random.default_rng()
    classes, probs = dist
    probs = np.asarray(probs, dtype=np.float64)
    usable = np.array([len(pool.features.get(j, ())) > 0 for j in classes], dtype=bool)
    mass = np.where(usable, probs, 0.0)
    if mass.sum() <= 0:
        raise EmptyPoolError("no foreground negatives available")
    counts = quota(mass / mass.sum(), m)
    keys, labels = [], []
    for j, n in zip(classes, counts):
        if n == 0:
            continue
        feats = pool.features[j]
        keys.append(feats[rng.integers(0, len(feats), size=int(n))])
        labels.append(np.full(int(n), j, dtype=np.int64))
    return np.concatenate(keys), np.concatenate(labels)
