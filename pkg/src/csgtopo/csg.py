"""Continuous stochastic gradient (CSG) bookkeeping.

Past gradient samples are kept in a slot-stable store and recombined with
integration weights obtained from a nearest-neighbour model evaluated on a
fixed quadrature grid over the random space. Distances in the product
space split into a design term ``||x_phys - x_i||_2`` and a precomputed,
normalized scenario term scaled by ``y_weight``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

EVICT_TOL = 1e-8
DISTANCE_FLOOR = 1e-10


@dataclass(frozen=True)
class QuadratureGrid:
    """Integration points in the random space and their probability weights."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.ndim == 1:
            pts = pts[:, None]
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.weights.shape != (pts.shape[0],):
            raise ValueError("one quadrature weight per point is required")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @classmethod
    def uniform(cls, points) -> "QuadratureGrid":
        pts = np.asarray(points)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))


class SampleStore:
    """Fixed-capacity store of gradient, design and compliance samples.

    ``x_ind[i]`` is the column of the scenario distance matrix belonging to
    slot ``i`` and ``birth[i]`` the iteration it was drawn in. Slots are
    overwritten in place on eviction.
    """

    def __init__(self, capacity: int, n_el: int, bsz: int = 1):
        if capacity < 1:
            raise ValueError("store capacity must be positive")
        if capacity % bsz:
            raise ValueError("store capacity must be divisible by the batch size")
        self.capacity = capacity
        self.bsz = bsz
        self.grad = np.zeros((capacity, n_el))
        self.design = np.zeros((capacity, n_el))
        self.compliance = np.zeros(capacity)
        self.x_ind = np.arange(capacity)
        self.birth = np.repeat(np.arange(1, capacity // bsz + 1), bsz)
        self.fill = 0

    @property
    def full(self) -> bool:
        return self.fill == self.capacity

    def insert(self, slot: int, grad: np.ndarray, compliance: float, design: np.ndarray) -> None:
        if not 0 <= slot < self.capacity:
            raise IndexError(f"slot {slot} outside store of capacity {self.capacity}")
        if slot > self.fill:
            raise IndexError(f"slot {slot} would leave a gap (fill={self.fill})")
        self.grad[slot] = grad
        self.compliance[slot] = compliance
        self.design[slot] = design
        self.fill = max(self.fill, slot + 1)

    def repoint(self, slots, seq_indices, birth: int) -> None:
        self.x_ind[slots] = seq_indices
        self.birth[slots] = birth


def normalize_distances(d: np.ndarray) -> np.ndarray:
    return d / np.max(np.maximum(d, DISTANCE_FLOOR))


def precompute_distances(y: np.ndarray, x_seq: np.ndarray) -> np.ndarray:
    """Normalized Euclidean distances between quadrature points and the scenario sequence."""
    y = np.atleast_2d(np.asarray(y, dtype=float).T).T
    x_seq = np.atleast_2d(np.asarray(x_seq, dtype=float).T).T
    if x_seq.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("scenario sequence and quadrature grid must be non-empty")
    return normalize_distances(cdist(y, x_seq))


def design_distances(x_phys: np.ndarray, store: SampleStore) -> np.ndarray:
    return np.linalg.norm(store.design[: store.fill] - x_phys[None, :], axis=1)


def nearest_indices(x_phys: np.ndarray, store: SampleStore, y_diff: np.ndarray,
                    y_weight: float) -> np.ndarray:
    """Slot of the nearest stored sample for every quadrature point (first slot wins ties)."""
    if store.fill < 1:
        raise ValueError("nearest-neighbour model needs at least one sample")
    dist = design_distances(x_phys, store)[None, :] + y_weight * y_diff[:, store.x_ind[: store.fill]]
    return np.argmin(dist, axis=1)


def integration_weights(nearest: np.ndarray, w: np.ndarray, fill: int) -> np.ndarray:
    nearest = np.asarray(nearest)
    if nearest.size and (nearest.min() < 0 or nearest.max() >= fill):
        raise ValueError("nearest index outside the filled slots")
    return np.bincount(nearest, weights=w, minlength=fill)


def weighted_compliance(store: SampleStore, alpha: np.ndarray, pnorm: float) -> tuple[float, float]:
    c = store.compliance[: store.fill]
    compl = float(np.sum(alpha * c))
    cp = float(np.sum(alpha * c**pnorm) ** (1.0 / pnorm))
    return compl, cp


def aggregate_gradient(store: SampleStore, alpha: np.ndarray, com0: float, pnorm: float) -> np.ndarray:
    c = store.compliance[: store.fill]
    coef = alpha * (c / com0) ** (pnorm - 1.0) / com0
    return coef @ store.grad[: store.fill]


def aggregate_objective(store: SampleStore, alpha: np.ndarray, com0: float,
                        pnorm: float) -> tuple[float, float, np.ndarray]:
    """Weighted mean compliance, its P-norm and the scaled aggregated gradient.

    The P-norm value uses the raw compliances while the gradient uses the
    ``com0``-scaled ones.
    """
    if com0 <= 0:
        raise ValueError("com0 must be positive")
    compl, cp = weighted_compliance(store, alpha, pnorm)
    return compl, cp, aggregate_gradient(store, alpha, com0, pnorm)


def select_evictee(alpha: np.ndarray, birth: np.ndarray) -> int:
    """Oldest slot among those whose weight is within 1e-8 of the minimum."""
    cand = np.flatnonzero(alpha - alpha.min() < EVICT_TOL)
    return int(cand[np.argmin(birth[cand])])


def select_evictee_batch(alpha: np.ndarray, birth: np.ndarray, bsz: int) -> np.ndarray:
    """The ``bsz`` oldest slots among those within 1e-8 of the ``bsz``-th smallest weight."""
    if bsz < 1 or bsz > alpha.size:
        raise ValueError(f"batch size {bsz} invalid for {alpha.size} slots")
    threshold = np.sort(alpha)[bsz - 1]
    cand = np.flatnonzero(alpha - threshold < EVICT_TOL)
    order = np.argsort(birth[cand], kind="stable")
    return cand[order[:bsz]]


class WeightDump:
    """CSV rows ``loop,slot,alpha,birth,x_ind`` for inspecting the weight evolution."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        with self.path.open("w", newline="") as fh:
            csv.writer(fh).writerow(["loop", "slot", "alpha", "birth", "x_ind"])

    def write(self, loop: int, alpha: np.ndarray, store: SampleStore) -> None:
        with self.path.open("a", newline="") as fh:
            w = csv.writer(fh)
            for i, a in enumerate(alpha):
                w.writerow([loop, i, repr(float(a)), int(store.birth[i]), int(store.x_ind[i])])
