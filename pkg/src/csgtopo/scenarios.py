"""Uncertainty models and scenario sequences.

Damage positions are 1-based ``(x, y)`` anchors of an ``L x L`` block, ``x``
counted from the left and ``y`` from the bottom. Load positions are 1-based
indices of the loaded top node.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from .csg import QuadratureGrid, normalize_distances
from .fem import GridMesh

OVERSAMPLE_X_STRIDE = 15
OVERSAMPLE_Y_STRIDE = 10


def matlab_round(v):
    """Round half away from zero."""
    v = np.asarray(v, dtype=float)
    return (np.sign(v) * np.floor(np.abs(v) + 0.5)).astype(np.int64)


@dataclass(frozen=True)
class DamageModel:
    """Square damage of side ``L`` with ``non_d`` top rows (and ``non_r`` right columns) excluded."""

    L: int = 20
    non_d: int = 5
    dmg_fac: float = 1.0
    non_r: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dmg_fac <= 1.0:
            raise ValueError("damage factor must lie in [0, 1]")
        if self.L < 1 or self.non_d < 0 or self.non_r < 0:
            raise ValueError("invalid damage geometry")

    def x_max(self, nelx: int) -> int:
        return nelx - self.L + 1 - self.non_r

    def y_max(self, nely: int) -> int:
        return nely - self.L + 1 - self.non_d

    def check(self, nelx: int, nely: int) -> None:
        if self.x_max(nelx) < 1 or self.y_max(nely) < 1:
            raise ValueError(f"damage block L={self.L} does not fit the admissible region "
                             f"of a {nelx}x{nely} mesh")


def enumerate_damage_grid(nelx: int, nely: int, L: int, non_d: int, non_r: int = 0) -> QuadratureGrid:
    model = DamageModel(L, non_d, 1.0, non_r)
    model.check(nelx, nely)
    y1, y2 = np.meshgrid(np.arange(1, model.x_max(nelx) + 1), np.arange(1, model.y_max(nely) + 1))
    points = np.column_stack([y1.ravel(order="F"), y2.ravel(order="F")])
    return QuadratureGrid.uniform(points)


def damage_indicator(pos, model: DamageModel, nelx: int, nely: int) -> np.ndarray:
    x, y = int(pos[0]), int(pos[1])
    d = np.zeros((nely, nelx))
    rows = nely - (y + np.arange(model.L))  # row 0 is the top row
    d[rows[-1]: rows[0] + 1, x - 1: x - 1 + model.L] = 1.0
    return np.ravel(d, order="F")


def apply_damage(x_phys: np.ndarray, pos, model: DamageModel, nelx: int, nely: int) -> np.ndarray:
    return np.clip(x_phys - model.dmg_fac * damage_indicator(pos, model, nelx, nely), 0.0, 1.0)


def sample_damage_sequence(rng: np.random.Generator, n: int, model: DamageModel,
                           nelx: int, nely: int) -> np.ndarray:
    model.check(nelx, nely)
    xs = rng.integers(1, model.x_max(nelx) + 1, size=n)
    ys = rng.integers(1, model.y_max(nely) + 1, size=n)
    return np.column_stack([xs, ys])


def mirror_positions(x_seq: np.ndarray, extent: int, L: int, axis: int = 0) -> np.ndarray:
    out = np.array(x_seq, copy=True)
    out[:, axis] = extent - L + 2 - out[:, axis]
    return out


def symmetric_damage_distance(y: np.ndarray, x_seq: np.ndarray, extent: int, L: int,
                              axis: int = 0) -> np.ndarray:
    """Normalized distances on the quotient space of a mirror symmetry.

    ``axis=0`` mirrors the horizontal anchor about the vertical mid-line
    (``extent = nelx``); ``axis=1`` mirrors the vertical anchor (``extent = nely``).
    """
    y = np.asarray(y, dtype=float)
    x_seq = np.asarray(x_seq, dtype=float)
    d = np.minimum(cdist(y, x_seq), cdist(y, mirror_positions(x_seq, extent, L, axis)))
    return normalize_distances(d)


def oversample_boundary(x_seq: np.ndarray) -> np.ndarray:
    out = np.array(x_seq, copy=True)
    out[::OVERSAMPLE_X_STRIDE, 0] = 1
    out[::OVERSAMPLE_Y_STRIDE, 1] = 1
    return out


def reduced_damage_grid(model: DamageModel, nelx: int, nely: int, count: int = 60) -> QuadratureGrid:
    """Coarse damage lattice of two interleaved layers.

    Both layers use ``count/4`` evenly spaced columns spanning the admissible
    range. Layer A sits on the bottom and top admissible rows, layer B at a
    quarter and three quarters of the admissible height, so the blocks of the
    two layers together tile the admissible region whenever the column
    spacing and the layer gaps do not exceed ``L``.
    """
    model.check(nelx, nely)
    if count < 4 or count % 4:
        raise ValueError(f"count={count} cannot be tiled as two layers of two rows")
    ncol = count // 4
    xmax, ymax = model.x_max(nelx), model.y_max(nely)
    if ncol > xmax or ymax < 4:
        raise ValueError("admissible damage region too small for the requested lattice")
    xa = xb = matlab_round(np.linspace(1, xmax, ncol))
    ya = np.array([1, ymax])
    yb = matlab_round([1 + (ymax - 1) / 4, 1 + 3 * (ymax - 1) / 4])
    pts = [(x, y) for y in ya for x in xa] + [(x, y) for y in yb for x in xb]
    pts = np.array(pts, dtype=np.int64)
    if np.unique(pts, axis=0).shape[0] != count:
        raise ValueError("reduced lattice has coincident damage cases")
    return QuadratureGrid.uniform(pts)


def sample_from_grid(rng: np.random.Generator, n: int, grid: QuadratureGrid) -> np.ndarray:
    return grid.points[rng.integers(0, grid.size, size=n)]


@dataclass(frozen=True)
class LoadPositionModel:
    dataset: np.ndarray
    support: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_dataset(cls, data, nelx: int | None = None) -> "LoadPositionModel":
        data = np.asarray(data, dtype=np.int64).ravel()
        if data.size == 0:
            raise ValueError("load dataset is empty")
        if data.min() < 1 or (nelx is not None and data.max() > nelx + 1):
            raise ValueError("load node index out of range")
        support, counts = np.unique(data, return_counts=True)
        return cls(data, support, counts / data.size)

    @property
    def grid(self) -> QuadratureGrid:
        return QuadratureGrid(self.support, self.probs)


def load_dataset(path: str | Path, nelx: int | None = None) -> LoadPositionModel:
    text = Path(path).read_text().split()
    return LoadPositionModel.from_dataset([int(t) for t in text], nelx)


def write_dataset(path: str | Path, data: np.ndarray) -> None:
    Path(path).write_text("\n".join(str(int(v)) for v in data) + "\n")


def synthesize_load_dataset(rng: np.random.Generator, nelx: int, path: str | Path | None = None,
                            n_first: int = 300_000, n_second: int = 100_000) -> np.ndarray:
    """Shuffled mixture of two normals truncated to [0, 1], mapped to top nodes."""
    p1 = stats.truncnorm((0 - 0.25) / 0.1, (1 - 0.25) / 0.1, loc=0.25, scale=0.1)
    p2 = stats.truncnorm((0 - 0.6) / 0.2, (1 - 0.6) / 0.2, loc=0.6, scale=0.2)
    r = np.concatenate([p1.rvs(n_first, random_state=rng), p2.rvs(n_second, random_state=rng)])
    r = r[rng.permutation(r.size)]
    data = matlab_round(nelx * r) + 1
    if path is not None:
        write_dataset(path, data)
    return data


def generate_load_sequence(model: LoadPositionModel, kind: str, rng: np.random.Generator,
                           n: int) -> np.ndarray:
    if kind == "distribution":
        return model.dataset[rng.integers(0, model.dataset.size, size=n)]
    if kind == "uniform":
        return model.support[rng.integers(0, model.support.size, size=n)]
    raise ValueError(f"unknown sequence type {kind!r}; expected 'distribution' or 'uniform'")


def build_point_load(mesh: GridMesh, node: int) -> np.ndarray:
    """Unit downward force on top node ``node`` (1-based, counted from the left)."""
    if not 1 <= node <= mesh.nelx + 1:
        raise ValueError(f"top node {node} outside [1, {mesh.nelx + 1}]")
    f = np.zeros(mesh.n_dof)
    f[2 * mesh.node_nrs[0, node - 1] + 1] = -1.0
    return f
