"""Exact expectation oracle, ensemble quantiles and the frozen-design integration study."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, build_run
from .csg import QuadratureGrid
from .fem import NU, SolverError
from .fields import SimpParams
from .optimizer import ScenarioSolver, precompute_distances_for, run_optimization
from .problems import Problem
from .scenarios import DamageModel, apply_damage, build_point_load

LOAD_RHS_CHUNK = 64


@dataclass
class EvaluationReport:
    E: float
    compliances: np.ndarray
    probabilities: np.ndarray
    J: float | None = None

    @property
    def gap(self) -> float | None:
        if self.J is None:
            return None
        return abs(self.J - self.E) / self.E

    def as_dict(self) -> dict:
        return {"E": self.E, "J": self.J, "gap": self.gap, "n_scenarios": int(self.compliances.size)}


def weighted_sum(p: np.ndarray, c: np.ndarray) -> float:
    return math.fsum(np.asarray(p, dtype=float) * np.asarray(c, dtype=float))


def exact_expected_compliance(problem: Problem, x_phys: np.ndarray, grid: QuadratureGrid, *,
                              damage: DamageModel | None = None, penal: float = 3.0,
                              nu: float = NU, J: float | None = None) -> EvaluationReport:
    """Solve the state equation for every scenario of ``grid`` and integrate.

    Damage scenarios need one factorization each; load scenarios share the
    factorization of the undamaged design and are solved as blocks of
    right-hand sides.
    """
    solver = ScenarioSolver(problem, SimpParams(penal), nu)
    mesh = problem.mesh
    c = np.empty(grid.size)
    if problem.uncertainty == "load":
        factor = solver.factorize(x_phys)
        nodes = grid.points[:, 0].astype(int)
        for s in range(0, nodes.size, LOAD_RHS_CHUNK):
            blk = nodes[s: s + LOAD_RHS_CHUNK]
            f = np.column_stack([build_point_load(mesh, int(n)) for n in blk])
            u = solver.displacements(factor, f)
            c[s: s + blk.size] = np.einsum("ij,ij->j", f, u)
    else:
        damage = damage or problem.damage
        for j, pos in enumerate(grid.points):
            x_dmg = apply_damage(x_phys, pos, damage, mesh.nelx, mesh.nely)
            try:
                u = solver.displacements(solver.factorize(x_dmg), problem.force)
            except SolverError as exc:
                raise SolverError(f"damage case at (x={pos[0]}, y={pos[1]}): {exc}") from exc
            c[j] = problem.force @ u
    return EvaluationReport(weighted_sum(grid.weights, c), c, grid.weights, J)


def empirical_quantile(values, q: float) -> float:
    """Smallest observed ``t`` with at least a fraction ``q`` of the values ``<= t``."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("quantile level must lie in [0, 1]")
    return float(np.quantile(np.asarray(values, dtype=float), q, method="inverted_cdf"))


@dataclass
class QuantileTable:
    checkpoints: np.ndarray
    values: np.ndarray  # (n_runs, n_checkpoints)
    levels: tuple
    seeds: tuple = ()

    def quantile(self, q: float) -> np.ndarray:
        return np.array([empirical_quantile(self.values[:, k], q)
                         for k in range(self.checkpoints.size)])

    def band(self, q1: float, q2: float) -> tuple[np.ndarray, np.ndarray]:
        return self.quantile(q1), self.quantile(q2)

    def as_rows(self) -> list[dict]:
        rows = []
        for k, loop in enumerate(self.checkpoints):
            row = {"loop": int(loop)}
            row.update({f"q{q:g}": empirical_quantile(self.values[:, k], q) for q in self.levels})
            rows.append(row)
        return rows

    def write_csv(self, path: str | Path) -> None:
        rows = self.as_rows()
        header = ["loop"] + [f"q{q:g}" for q in self.levels]
        lines = [",".join(header)]
        lines += [",".join(f"{r[h]:.17g}" if h != "loop" else str(r[h]) for h in header) for r in rows]
        Path(path).write_text("\n".join(lines) + "\n")


def ensemble_quantiles(cfg: RunConfig, n_runs: int, levels=(0.1, 0.5, 0.9), cadence: int = 50, *,
                       seeds=None, partial_path: str | Path | None = None) -> QuantileTable:
    """Run independent optimizations and track quantiles of the exact expectation.

    The exact expected compliance is evaluated every ``cadence`` iterations and
    at the last one. If a run fails, the completed runs are written to
    ``partial_path`` before the error propagates.
    """
    if n_runs < 1 or cadence < 1:
        raise ValueError("n_runs and cadence must be positive")
    seeds = tuple(seeds) if seeds is not None else tuple(cfg.seed + i for i in range(n_runs))
    if len(seeds) != n_runs or len(set(seeds)) != n_runs:
        raise ValueError("need one distinct seed per run")
    maxit = cfg.opt.maxit
    checkpoints = np.unique(np.r_[np.arange(cadence, maxit + 1, cadence), maxit])
    values = np.full((n_runs, checkpoints.size), np.nan)
    for r, seed in enumerate(seeds):
        problem, model = build_run(cfg, seed)
        row = values[r]

        def on_iter(loop, state, _row=row, _problem=problem, _model=model):
            k = np.searchsorted(checkpoints, loop)
            if k < checkpoints.size and checkpoints[k] == loop:
                _row[k] = exact_expected_compliance(_problem, state.x_phys, _model.grid).E

        try:
            run_optimization(cfg.opt, problem, model, callback=on_iter)
        except Exception:
            if partial_path is not None:
                QuantileTable(checkpoints, values[:r], tuple(levels), seeds[:r]).write_csv(partial_path)
            raise
    return QuantileTable(checkpoints, values, tuple(levels), seeds)


@dataclass
class IntegrationStudy:
    exact: float
    errors: dict = field(default_factory=dict)  # metric -> relative error per sample count


def frozen_nearest_series(y_diff: np.ndarray):
    """Nearest sample per quadrature point after each new sample, for a frozen design.

    With the design fixed the design term of the product distance vanishes, so
    the nearest sample only changes where the new column is strictly closer.
    Ties therefore keep the earliest sample.
    """
    best = np.full(y_diff.shape[0], np.inf)
    nearest = np.zeros(y_diff.shape[0], dtype=np.int64)
    for n in range(y_diff.shape[1]):
        d = y_diff[:, n]
        upd = d < best
        best[upd] = d[upd]
        nearest[upd] = n
        yield nearest


def integration_error_study(problem: Problem, grid: QuadratureGrid, compliances: np.ndarray,
                            n_steps: int, rng: np.random.Generator,
                            metrics=("plain", "symmetric")) -> IntegrationStudy:
    """Relative error of the nearest-neighbour integral of a frozen design's compliance.

    ``compliances`` holds the exact compliance at every grid point. Samples are
    drawn uniformly from the grid, so a sample's compliance is looked up
    rather than re-solved.
    """
    compliances = np.asarray(compliances, dtype=float)
    exact = weighted_sum(grid.weights, compliances)
    idx = rng.integers(0, grid.size, size=n_steps)
    seq = grid.points[idx]
    study = IntegrationStudy(exact)
    for metric in metrics:
        if metric == "symmetric":
            axis = problem.symmetry_axis
            if axis is None:
                raise ValueError(f"preset {problem.name!r} has no mirror symmetry")
            extent = problem.mesh.nelx if axis == 0 else problem.mesh.nely
            y_diff = precompute_distances_for(grid.points, seq, axis=axis, extent=extent,
                                              L=problem.damage.L)
        elif metric == "plain":
            y_diff = precompute_distances_for(grid.points, seq)
        else:
            raise ValueError(f"unknown metric {metric!r}")
        c_seq = compliances[idx]
        err = np.empty(n_steps)
        for n, nearest in enumerate(frozen_nearest_series(y_diff)):
            err[n] = abs(weighted_sum(grid.weights, c_seq[nearest]) - exact) / exact
        study.errors[metric] = err
    return study
