"""Problem presets: geometry, supports, passive sets, loads and the default uncertainty model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import BoundaryConditions, GridMesh, build_mesh
from .scenarios import DamageModel

Schedule = tuple  # (start, cap, period, increment)

PENAL_SCHEDULE = (3, 5, 50, 0)
BETA_SCHEDULE = (2, 16, 50, 1)


@dataclass
class Problem:
    name: str
    mesh: GridMesh
    bc: BoundaryConditions
    force: np.ndarray | None
    uncertainty: str  # "damage" or "load"
    damage: DamageModel | None = None
    y_weight_scale: float = 1.0
    bracket_scale: float = 1.0
    beta_schedule: Schedule = BETA_SCHEDULE
    penal_schedule: Schedule = PENAL_SCHEDULE
    symmetry_axis: int | None = None
    extra: dict = field(default_factory=dict)


def _both_dofs(nodes) -> np.ndarray:
    nodes = np.asarray(nodes)
    return np.union1d(2 * nodes, 2 * nodes + 1)


def clamp(nelx: int = 180, nely: int = 45, damage: DamageModel | None = None) -> Problem:
    """Domain clamped left and right under a uniform top load (half weight on end nodes)."""
    mesh = build_mesh(nelx, nely)
    nodes = np.union1d(mesh.node_nrs[:, 0], mesh.node_nrs[:, -1])
    bc = BoundaryConditions.from_sets(mesh, _both_dofs(nodes))
    lc = 2 * mesh.node_nrs[0, :] + 1
    f = np.zeros(mesh.n_dof)
    f[lc] = -1.0 / lc.size
    f[lc[0]] *= 0.5
    f[lc[-1]] *= 0.5
    return Problem("clamp", mesh, bc, f, "damage", damage or DamageModel(20, 5, 1.0),
                   symmetry_axis=0)


def beam(nelx: int = 180, nely: int = 60, damage: DamageModel | None = None) -> Problem:
    """Cantilever fixed on the left, point load at mid-height of the right edge."""
    mesh = build_mesh(nelx, nely)
    bc = BoundaryConditions.from_sets(mesh, _both_dofs(mesh.node_nrs[:, 0]))
    f = np.zeros(mesh.n_dof)
    f[2 * mesh.node_nrs[nely // 2, -1] + 1] = -1.0
    return Problem("beam", mesh, bc, f, "damage", damage or DamageModel(22, 0, 1.0, non_r=10),
                   symmetry_axis=1)


def load(nelx: int = 360, nely: int = 90) -> Problem:
    """Lower halves of both side edges supported, passive solid top row, random top node load."""
    mesh = build_mesh(nelx, nely)
    half = int(np.floor(nely / 2 + 0.5)) - 1
    nodes = np.union1d(mesh.node_nrs[half:, 0], mesh.node_nrs[half:, -1])
    pas_s = np.arange(0, nelx * nely, nely)
    bc = BoundaryConditions.from_sets(mesh, _both_dofs(nodes), pas_s=pas_s)
    return Problem("load", mesh, bc, None, "load", None, y_weight_scale=5.0, bracket_scale=10.0,
                   beta_schedule=(2, 16, 75, 1))


def mbb(nelx: int = 180, nely: int = 60, damage: DamageModel | None = None) -> Problem:
    """Symmetric half of the MBB beam: roller symmetry on the left, support at the bottom right."""
    mesh = build_mesh(nelx, nely)
    fixed = np.union1d(2 * mesh.node_nrs[:, 0], [2 * mesh.node_nrs[-1, -1] + 1])
    bc = BoundaryConditions.from_sets(mesh, fixed)
    n_load = max(1, int(round(nelx / 30))) + 1
    f = np.zeros(mesh.n_dof)
    f[2 * mesh.node_nrs[0, :n_load] + 1] = -1.0 / n_load
    return Problem("mbb", mesh, bc, f, "damage", damage or DamageModel(20, 5, 1.0))


PRESETS = {"clamp": clamp, "beam": beam, "load": load, "mbb": mbb}


def make_problem(name: str, nelx: int | None = None, nely: int | None = None, **kwargs) -> Problem:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    dims = {k: v for k, v in (("nelx", nelx), ("nely", nely)) if v is not None}
    return factory(**dims, **kwargs)
