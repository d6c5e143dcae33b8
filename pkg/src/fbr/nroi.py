"""Background clustering into NROIs and the FIFO memory bank that stores them."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, EmptyBackgroundError, EmptyBankError

NORM_EPS = 1e-12


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), NORM_EPS)


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _inertia(x: np.ndarray, labels: np.ndarray, k: int) -> float:
    total = 0.0
    for j in range(k):
        members = x[labels == j]
        if len(members):
            total += float(((members - members.mean(0)) ** 2).sum())
    return total


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            break
        pick = rng.choice(n, p=closest / total)
        centers.append(x[pick])
        closest = np.minimum(closest, _sq_dists(x, x[pick][None, :])[:, 0])
    return np.array(centers)


def _lloyd(x: np.ndarray, k: int, rng: np.random.Generator, max_iter: int) -> ClusterResult:
    centers = _kmeanspp(x, k, rng)
    k = centers.shape[0]
    labels = np.argmin(_sq_dists(x, centers), axis=1)
    history = []
    for _ in range(max_iter):
        for j in range(k):
            members = labels == j
            if not members.any():
                # reseed an empty cluster with the point farthest from its current centroid
                far = np.argmax(((x - centers[labels]) ** 2).sum(1))
                labels[far] = j
        centers = np.stack([x[labels == j].mean(0) for j in range(k)])
        history.append(_inertia(x, labels, k))
        new_labels = np.argmin(_sq_dists(x, centers), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    inertia = _inertia(x, labels, k)
    return ClusterResult(labels, _normalize_rows(centers), inertia, history)


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator, n_init: int = 1,
           max_iter: int = 50) -> ClusterResult:
    """Lloyd's algorithm with k-means++ seeding; best of ``n_init`` restarts.

    ``points`` are used as given (callers normalize). When there are fewer
    distinct points than ``k``, ``k`` drops to the distinct count. Returned
    centroids are unit-normalized; ``inertia`` is measured against the raw
    cluster means.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ArgumentError("kmeans needs a non-empty 2-D point array")
    if k < 1:
        raise ArgumentError("k must be >= 1")
    k_eff = min(int(k), np.unique(x, axis=0).shape[0])
    best = None
    for _ in range(max(1, int(n_init))):
        res = _lloyd(x, k_eff, rng, max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def background_vectors(z_bg, seeds: np.ndarray, bg_label: int) -> np.ndarray:
    """Unit-normalized background pixel features (``DxHxW`` input) as an ``n x D`` array."""
    z = z_bg.detach().cpu().numpy() if hasattr(z_bg, "detach") else np.asarray(z_bg, dtype=np.float64)
    mask = np.asarray(seeds) == bg_label
    if mask.shape != z.shape[1:]:
        raise ArgumentError(f"seed map {mask.shape} vs features {z.shape[1:]}")
    vecs = z[:, mask].T
    vecs = vecs[np.linalg.norm(vecs, axis=1) >= NORM_EPS]
    return _normalize_rows(vecs)


def extract_nrois(z_bg, seeds: np.ndarray, bg_label: int, k: int = 8,
                  rng: np.random.Generator | None = None, n_init: int = 1) -> ClusterResult:
    """Cluster one image's background features; centroids are the NROIs.

    Raises ``EmptyBackgroundError`` when no background pixel carries a usable
    feature, in which case the caller skips the fore-to-background term.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    vecs = background_vectors(z_bg, seeds, bg_label)
    if vecs.shape[0] == 0:
        raise EmptyBackgroundError("no background pixels to cluster")
    return kmeans(vecs, k, rng, n_init=n_init)


class NroiBank:
    """Fixed-capacity FIFO queue of unit vectors backed by a ring buffer."""

    def __init__(self, capacity: int = 50_000, dim: int | None = None):
        if capacity < 1:
            raise ArgumentError("bank capacity must be >= 1")
        self.capacity = int(capacity)
        self.dim = dim
        self._buf: np.ndarray | None = None
        self._start = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, centroids) -> None:
        c = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
        if c.size == 0:
            return
        if self.dim is None:
            self.dim = c.shape[1]
        if c.shape[1] != self.dim:
            raise ArgumentError(f"bank holds {self.dim}-d vectors, got {c.shape[1]}-d")
        if self._buf is None:
            self._buf = np.empty((self.capacity, self.dim))
        c = _normalize_rows(c)
        if c.shape[0] > self.capacity:
            c = c[-self.capacity:]
        for row in c:
            end = (self._start + self._size) % self.capacity
            self._buf[end] = row
            if self._size < self.capacity:
                self._size += 1
            else:
                self._start = (self._start + 1) % self.capacity

    def entries(self) -> np.ndarray:
        """Stored vectors, oldest first."""
        if self._size == 0:
            return np.empty((0, self.dim or 0))
        idx = (self._start + np.arange(self._size)) % self.capacity
        return self._buf[idx].copy()

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        """``m`` uniform draws with replacement."""
        if self._size == 0:
            raise EmptyBankError("memory bank is empty")
        logical = rng.integers(0, self._size, size=int(m))
        return self._buf[(self._start + logical) % self.capacity].copy()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in self.entries():
                writer.writerow([repr(float(v)) for v in row])


def bank_push(bank: NroiBank, centroids) -> None:
    bank.push(centroids)


def bank_sample(bank: NroiBank, m: int = 256, rng: np.random.Generator | None = None) -> np.ndarray:
    return bank.sample(m, rng if rng is not None else np.random.default_rng())
