"""Optimality-criteria loop driven by CSG gradient approximations."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import csg
from .csg import QuadratureGrid, SampleStore
from .fem import E0, EMIN, NU, Factorization, StiffnessAssembler, element_energies, element_stiffness
from .fields import (FilterKernel, SimpParams, apply_filter, backfilter, filter_scaling, project,
                     simp_interpolate, volume_preserving_eta)
from .problems import Problem
from .scenarios import (DamageModel, LoadPositionModel, apply_damage, build_point_load,
                        enumerate_damage_grid, generate_load_sequence, oversample_boundary,
                        reduced_damage_grid, sample_damage_sequence, sample_from_grid,
                        symmetric_damage_distance)

log = logging.getLogger(__name__)

BISECTION_RTOL = 1e-8
BISECTION_FLOOR = 1e-40
MAX_BRACKET_DOUBLINGS = 60


class BisectionWarning(RuntimeWarning):
    """The volume bisection could not bring the design below the volume fraction."""


class PositiveSensitivityError(ValueError):
    """A positive compliance sensitivity reached the OC update without the clamp enabled."""


@dataclass
class OptimizerConfig:
    volfrac: float = 0.4
    penal: float = 3.0
    rmin: float = 3.2
    ft: int = 2
    ftbc: str = "N"
    eta: float = 0.5
    beta: float = 2.0
    move: float = 0.01
    pnorm: float = 1.0
    maxit: int = 1500
    maxsmpl: int = 2000
    bsz: int = 1
    com0: float = 100.0
    com0_period: int = 25
    penal_schedule: tuple | None = None
    beta_schedule: tuple | None = None
    clamp_nonneg: bool = False
    symmetrize_dc: bool = False
    e0: float = E0
    emin: float = EMIN
    nu: float = NU
    y_weight_factor: float | None = None
    bracket_scale: float | None = None

    def validate(self) -> None:
        if not 0 < self.volfrac < 1:
            raise ValueError("volfrac must lie in (0, 1)")
        if not 0 < self.move < 1:
            raise ValueError("move must lie in (0, 1)")
        if self.ft not in (1, 2, 3):
            raise ValueError("ft must be 1, 2 or 3")
        if self.maxit < 1 or self.maxsmpl < 1 or self.bsz < 1:
            raise ValueError("maxit, maxsmpl and bsz must be positive")
        if self.maxsmpl % self.bsz:
            raise ValueError("maxsmpl must be divisible by bsz")
        if self.pnorm < 1 or self.penal < 1:
            raise ValueError("pnorm and penal must be >= 1")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        for sched in (self.penal_schedule, self.beta_schedule):
            if sched is not None and (len(sched) != 4 or sched[2] < 1):
                raise ValueError(f"malformed continuation schedule {sched}")


@dataclass(frozen=True)
class IterationRecord:
    loop: int
    Compl: float
    Cp: float
    volume: float
    penal: float
    beta: float
    eta: float
    wall_ms: float


@dataclass
class DesignState:
    x: np.ndarray
    x_tilde: np.ndarray
    x_phys: np.ndarray
    act: np.ndarray
    dc: np.ndarray | None = None  # aggregated, filtered gradient of the last iteration


@dataclass
class StochasticModel:
    """Quadrature grid, scenario sequence and their normalized distance matrix."""

    kind: str
    grid: QuadratureGrid
    sequence: np.ndarray
    y_diff: np.ndarray
    damage: DamageModel | None = None

    def scenario(self, j: int):
        s = self.sequence[j]
        return s if self.kind == "damage" else int(np.ravel(s)[0])


def precompute_distances_for(points, seq, *, axis: int | None = None, extent: int = 0,
                             L: int = 0) -> np.ndarray:
    if axis is None:
        return csg.precompute_distances(points, seq)
    return symmetric_damage_distance(points, seq, extent, L, axis)


def build_stochastic_model(problem: Problem, n_seq: int, rng: np.random.Generator, *,
                           metric: str = "plain", oversample: bool = False,
                           reduced_grid: bool = False, load_model: LoadPositionModel | None = None,
                           sequence_type: str = "distribution",
                           damage: DamageModel | None = None) -> StochasticModel:
    mesh = problem.mesh
    if metric not in ("plain", "symmetric"):
        raise ValueError(f"unknown metric {metric!r}")
    if problem.uncertainty == "load":
        if load_model is None:
            raise ValueError("the load preset needs a load dataset")
        seq = generate_load_sequence(load_model, sequence_type, rng, n_seq)[:, None]
        grid = load_model.grid
        return StochasticModel("load", grid, seq, precompute_distances_for(grid.points, seq))
    model = damage or problem.damage
    if reduced_grid:
        grid = reduced_damage_grid(model, mesh.nelx, mesh.nely)
        seq = sample_from_grid(rng, n_seq, grid)
    else:
        grid = enumerate_damage_grid(mesh.nelx, mesh.nely, model.L, model.non_d, model.non_r)
        seq = sample_damage_sequence(rng, n_seq, model, mesh.nelx, mesh.nely)
    if oversample:
        seq = oversample_boundary(seq)
    axis = problem.symmetry_axis if metric == "symmetric" else None
    if metric == "symmetric" and axis is None:
        raise ValueError(f"preset {problem.name!r} has no mirror symmetry")
    extent = mesh.nelx if axis == 0 else mesh.nely
    y_diff = precompute_distances_for(grid.points, seq, axis=axis, extent=extent, L=model.L)
    return StochasticModel("damage", grid, seq, y_diff, model)


def continuation(v: float, schedule, loop: int) -> float:
    start, cap, period, inc = schedule
    if loop >= start and v < cap and loop % period == 0:
        return v + inc
    return v


class ScenarioSolver:
    """Assemble, factorize and solve the state equation for individual scenarios."""

    def __init__(self, problem: Problem, simp: SimpParams, nu: float = NU):
        self.problem = problem
        self.mesh = problem.mesh
        self.ke = element_stiffness(nu)
        self.assembler = StiffnessAssembler(self.mesh, self.ke, problem.bc.free)
        self.simp = simp
        self.n_solves = 0
        self.n_factorizations = 0

    def factorize(self, x_field: np.ndarray) -> Factorization:
        s_k, _ = simp_interpolate(x_field, self.simp)
        self.n_factorizations += 1
        return Factorization(self.assembler.assemble(s_k))

    def load_vector(self, scenario, kind: str) -> np.ndarray:
        if kind == "load":
            return build_point_load(self.mesh, scenario)
        return self.problem.force

    def displacements(self, factor: Factorization, f: np.ndarray) -> np.ndarray:
        free = self.problem.bc.free
        u = np.zeros(f.shape)
        u[free] = factor.solve(f[free])
        self.n_solves += 1 if f.ndim == 1 else f.shape[1]
        return u

    def solve_batch(self, x_phys: np.ndarray, model: StochasticModel, scenarios,
                    act: np.ndarray, simp: SimpParams) -> list[tuple[float, np.ndarray]]:
        """Compliance and element-level sensitivity for each scenario of a batch."""
        self.simp = simp
        out = []
        if model.kind == "load":
            factor = self.factorize(x_phys)
            f = np.column_stack([self.load_vector(s, "load") for s in scenarios])
            u = self.displacements(factor, f)
            _, ds_k = simp_interpolate(x_phys, simp, act)
            for j in range(len(scenarios)):
                out.append((float(f[:, j] @ u[:, j]),
                            ds_k * element_energies(u[:, j], self.mesh, self.ke)))
            return out
        for s in scenarios:
            x_dmg = apply_damage(x_phys, s, model.damage, self.mesh.nelx, self.mesh.nely)
            f = self.problem.force
            u = self.displacements(self.factorize(x_dmg), f)
            _, ds_k = simp_interpolate(x_dmg, simp, act)
            out.append((float(f @ u), ds_k * element_energies(u, self.mesh, self.ke)))
        return out


def physical_field(x: np.ndarray, x_phys: np.ndarray, act: np.ndarray, kernel: FilterKernel,
                   ft: int, eta: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    x_tilde = apply_filter(x, kernel)
    x_phys = x_phys.copy()
    x_phys[act] = x_tilde[act]
    if ft > 1:
        x_phys = project(x_phys, eta, beta)
    return x_tilde, x_phys


def oc_update(x: np.ndarray, dc: np.ndarray, dv0: np.ndarray, x_phys: np.ndarray,
              act: np.ndarray, kernel: FilterKernel, *, volfrac: float, move: float, ft: int,
              eta: float, beta: float, bracket_scale: float = 1.0,
              clamp_nonneg: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """One OC step with bisection on the volume multiplier.

    Returns the new raw design and the physical field of the accepted trial.
    Trials re-filter (and re-project when ft > 1) but the sensitivities keep
    the filter scaling of the current iterate; it is not refreshed per trial.
    """
    xt = x[act]
    x_upper, x_lower = xt + move, xt - move
    neg_dc = -dc[act]
    if clamp_nonneg:
        neg_dc = np.maximum(1e-10, neg_dc)
    elif np.any(neg_dc < 0):
        worst = int(act[np.argmin(neg_dc)])
        raise PositiveSensitivityError(
            f"compliance sensitivity is positive at element {worst} ({-neg_dc.min():.3e}); "
            "enable clamp_nonneg for objectives without a sign guarantee")
    ocp = xt * np.sqrt(neg_dc / dv0[act])
    x_new = x.copy()

    def floor_volume(step):
        x_new[act] = np.maximum(xt - step, 0.0)
        return np.mean(physical_field(x_new, x_phys, act, kernel, ft, eta, beta)[1])

    # after a projection sharpening the volume can sit out of reach of the move
    # limit; relax the lower limit only, and only as far as needed
    step = move
    while step < 1.0 and floor_volume(step) > volfrac:
        step = min(1.0, 2.0 * step)
    if step != move:
        log.debug("lower move limit relaxed from %.3g to %.3g", move, step)
        x_lower = xt - step

    def trial(lam):
        x_new[act] = np.maximum(np.maximum(np.minimum(np.minimum(ocp / lam, x_upper), 1.0),
                                           x_lower), 0.0)
        return physical_field(x_new, x_phys, act, kernel, ft, eta, beta)[1]

    lo, hi = 0.0, bracket_scale * np.mean(ocp) / volfrac
    if not hi > BISECTION_FLOOR:
        return x_new, physical_field(x_new, x_phys, act, kernel, ft, eta, beta)[1]
    hi0 = hi
    # widen the initial bracket when its upper end is still infeasible
    n_expand = 0
    while np.mean(trial(hi)) > volfrac and n_expand < MAX_BRACKET_DOUBLINGS:
        lo, hi = hi, 2.0 * hi
        n_expand += 1
    if n_expand:
        log.debug("volume bracket widened %d times from %.3e", n_expand, hi0)
    while hi > BISECTION_FLOOR and (hi - lo) / (hi + lo) > BISECTION_RTOL:
        lmid = 0.5 * (lo + hi)
        if np.mean(trial(lmid)) > volfrac:
            lo = lmid
        else:
            hi = lmid
    # accept the feasible end of the final interval
    phys = trial(hi)
    if np.mean(phys) > volfrac:
        warnings.warn(f"volume bisection failed to bracket: mean(xPhys)={np.mean(phys):.6f} > "
                      f"volfrac={volfrac} even at multiplier {hi:.3e} (initial bound {hi0:.3e})",
                      BisectionWarning, stacklevel=2)
    return x_new, phys


def symmetrize(dc: np.ndarray, mesh, axis: int) -> np.ndarray:
    g = mesh.to_grid(dc)
    g = g + (g[:, ::-1] if axis == 0 else g[::-1, :])
    return mesh.to_vector(g)


@dataclass(frozen=True)
class EvictionEvent:
    loop: int
    slots: np.ndarray
    alpha: np.ndarray
    birth: np.ndarray


@dataclass
class OptimizationResult:
    state: DesignState
    history: list[IterationRecord]
    store: SampleStore
    model: StochasticModel
    rl1_volumes: list[float] = field(default_factory=list)
    eta_residuals: list[float] = field(default_factory=list)
    evictions: list[EvictionEvent] = field(default_factory=list)
    n_solves: int = 0
    n_factorizations: int = 0

    @property
    def J_final(self) -> float:
        return self.history[-1].Compl


def initial_design(problem: Problem, volfrac: float) -> DesignState:
    bc = problem.bc
    n_el = problem.mesh.n_el
    x = np.zeros(n_el)
    x[bc.act] = (volfrac * (n_el - bc.pas_v.size) - bc.pas_s.size) / bc.act.size
    x[bc.pas_s] = 1.0
    return DesignState(x, x.copy(), x.copy(), bc.act)


def run_optimization(config: OptimizerConfig, problem: Problem, model: StochasticModel, *,
                     callback: Callable[[int, DesignState], None] | None = None,
                     history_writer=None, weight_dump: csg.WeightDump | None = None,
                     verbose: bool = False) -> OptimizationResult:
    config.validate()
    if config.symmetrize_dc and problem.symmetry_axis is None:
        raise ValueError(f"preset {problem.name!r} has no mirror symmetry to symmetrize over")
    mesh, bc = problem.mesh, problem.bc
    act = bc.act
    bsz = config.bsz
    if model.sequence.shape[0] < config.maxit * bsz:
        raise ValueError("scenario sequence shorter than maxit * bsz")
    penal_sched = config.penal_schedule or problem.penal_schedule
    beta_sched = config.beta_schedule or problem.beta_schedule
    bracket = config.bracket_scale or problem.bracket_scale
    y_weight = (config.y_weight_factor or problem.y_weight_scale) * config.volfrac * np.sqrt(mesh.n_el)
    penal, beta, eta, com0 = config.penal, config.beta, config.eta, config.com0
    simp = SimpParams(penal, config.e0, config.emin)
    solver = ScenarioSolver(problem, simp, config.nu)
    kernel = FilterKernel.build(mesh.nelx, mesh.nely, config.rmin, config.ftbc)
    dhs = kernel.hs

    state = initial_design(problem, config.volfrac)
    dv = np.zeros(mesh.n_el)
    dv[act] = 1.0 / mesh.n_el / config.volfrac
    store = SampleStore(min(config.maxsmpl, config.maxit * bsz), mesh.n_el, bsz)
    leavers = np.arange(bsz)
    w = model.grid.weights
    result = OptimizationResult(state, [], store, model)

    for loop in range(1, config.maxit + 1):
        t0 = time.perf_counter()
        # physical field
        x_tilde = apply_filter(state.x, kernel)
        x_phys = state.x_phys.copy()
        x_phys[act] = x_tilde[act]
        if config.ft > 1:
            if config.ft == 3:
                eta = volume_preserving_eta(x_phys, eta, beta, config.volfrac)
            dhs = filter_scaling(kernel, x_tilde, eta, beta)
            x_phys = project(x_phys, eta, beta)
        state.x_tilde, state.x_phys = x_tilde, x_phys
        result.rl1_volumes.append(float(np.mean(x_phys)))
        result.eta_residuals.append(float(np.mean(x_phys) - config.volfrac))

        # scenario solves and sensitivities
        simp = SimpParams(penal, config.e0, config.emin)
        scen = [model.scenario(j) for j in range((loop - 1) * bsz, loop * bsz)]
        samples = solver.solve_batch(x_phys, model, scen, act, simp)
        dv0 = backfilter(dv, kernel, dhs)

        # sample management and integration weights
        for slot, (c, dc_el) in zip(leavers, samples):
            if config.symmetrize_dc:
                dc_el = symmetrize(dc_el, mesh, problem.symmetry_axis)
            store.insert(int(slot), backfilter(dc_el, kernel, dhs), c, x_phys)
        nearest = csg.nearest_indices(x_phys, store, model.y_diff, y_weight)
        alpha = csg.integration_weights(nearest, w, store.fill)
        if weight_dump is not None:
            weight_dump.write(loop, alpha, store)
        if (loop + 1) * bsz <= store.capacity:
            leavers = np.arange(loop * bsz, (loop + 1) * bsz)
        elif loop < config.maxit:
            birth_before = store.birth.copy()
            if bsz == 1:
                leavers = np.array([csg.select_evictee(alpha, store.birth)])
            else:
                leavers = csg.select_evictee_batch(alpha, store.birth, bsz)
            store.repoint(leavers, np.arange(loop * bsz, (loop + 1) * bsz), loop + 1)
            result.evictions.append(EvictionEvent(loop, leavers.copy(), alpha.copy(), birth_before))

        # nearest-neighbour approximations
        compl, cp = csg.weighted_compliance(store, alpha, config.pnorm)
        if loop % config.com0_period == 0:
            com0 = compl
        dc = csg.aggregate_gradient(store, alpha, com0, config.pnorm)
        state.dc = dc

        # design update and continuation
        state.x, phys = oc_update(state.x, dc, dv0, x_phys, act, kernel, volfrac=config.volfrac,
                                  move=config.move, ft=config.ft, eta=eta, beta=beta,
                                  bracket_scale=bracket, clamp_nonneg=config.clamp_nonneg)
        state.x_phys = phys
        penal = continuation(penal, penal_sched, loop)
        beta = continuation(beta, beta_sched, loop)

        # record
        rec = IterationRecord(loop, compl, cp, float(np.mean(phys)), penal, beta, eta,
                              1e3 * (time.perf_counter() - t0))
        result.history.append(rec)
        if history_writer is not None:
            history_writer.write(rec)
        if verbose:
            log.info("It.:%5i Obj.:%9.4f Cp:%9.4f Vol.:%6.3f penal:%4.2f beta:%5.1f eta:%6.3f",
                     loop, compl, cp, rec.volume, penal, beta, eta)
        if callback is not None:
            callback(loop, state)

    result.n_solves = solver.n_solves
    result.n_factorizations = solver.n_factorizations
    return result


def with_overrides(config: OptimizerConfig, **kwargs) -> OptimizerConfig:
    return replace(config, **kwargs)
