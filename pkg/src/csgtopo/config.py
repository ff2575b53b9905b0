"""Run configuration: flat ``key=value`` files, CLI overrides and preset defaults."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .optimizer import OptimizerConfig, StochasticModel, build_stochastic_model
from .problems import PRESETS, Problem, make_problem
from .scenarios import DamageModel, LoadPositionModel, load_dataset, synthesize_load_dataset

DATASET_STREAM = 1  # key of the synthetic load-dataset stream

# parameters the presets change relative to the reference call
PRESET_DEFAULTS = {
    "load": {"rmin": 6.4},
    "beam": {"move": 2.5e-3},
}

ALIASES = {"ftBC": "ftbc", "nonD": "non_d", "nonR": "non_r", "E0": "e0", "Emin": "emin",
           "P": "pnorm", "type": "seq_type", "y_weight": "y_weight_factor"}


@dataclass
class RunConfig:
    preset: str = "clamp"
    nelx: int | None = None
    nely: int | None = None
    L: int | None = None
    non_d: int | None = None
    non_r: int | None = None
    dmg_fac: float | None = None
    seq_type: str = "distribution"
    dataset: str | None = None
    metric: str = "plain"
    oversample: bool = False
    reduced_grid: bool = False
    seed: int = 0
    out: str = "out"
    eval_cadence: int = 0
    opt: OptimizerConfig = field(default_factory=OptimizerConfig)

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.seq_type not in ("distribution", "uniform"):
            raise ValueError("type must be 'distribution' or 'uniform'")
        if self.metric not in ("plain", "symmetric"):
            raise ValueError("metric must be 'plain' or 'symmetric'")
        if self.eval_cadence < 0:
            raise ValueError("eval_cadence must be >= 0")
        self.opt.validate()

    def damage_model(self, problem: Problem) -> DamageModel | None:
        base = problem.damage
        if base is None:
            return None
        return DamageModel(
            self.L if self.L is not None else base.L,
            self.non_d if self.non_d is not None else base.non_d,
            self.dmg_fac if self.dmg_fac is not None else base.dmg_fac,
            self.non_r if self.non_r is not None else base.non_r,
        )

    def to_mapping(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "opt"}
        out.update(dataclasses.asdict(self.opt))
        return out


_RUN_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "opt"}
_OPT_FIELDS = {f.name: f for f in fields(OptimizerConfig)}


def canonical_key(key: str) -> str:
    key = key.strip()
    key = ALIASES.get(key, key).replace("-", "_")
    if key in _RUN_FIELDS or key in _OPT_FIELDS:
        return key
    lower = key.lower()
    for name in (*_RUN_FIELDS, *_OPT_FIELDS):
        if name.lower() == lower:
            return name
    raise KeyError(f"unknown configuration key {key!r}")


def _coerce(name: str, value):
    if not isinstance(value, str):
        return value
    v = value.strip()
    typ = str((_RUN_FIELDS.get(name) or _OPT_FIELDS[name]).type)
    if v.lower() in ("none", ""):
        return None
    if "bool" in typ:
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: cannot read {value!r} as a boolean")
    if "tuple" in typ:
        return tuple(float(t) for t in v.replace(" ", "").strip("()").split(","))
    if typ.startswith("int"):
        return int(v)
    if typ.startswith("float"):
        return float(v)
    return v


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        key = canonical_key(k)
        out[key] = _coerce(key, v)
    return out


def read_config_file(path: str | Path) -> dict:
    return parse_config_text(Path(path).read_text())


def write_config_file(cfg: RunConfig, path: str | Path) -> None:
    lines = []
    for k, v in cfg.to_mapping().items():
        if isinstance(v, tuple):
            v = ",".join(repr(t) for t in v)
        lines.append(f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n")


def resolve_config(file_values: dict | None = None, cli_values: dict | None = None) -> RunConfig:
    """Layer defaults, preset defaults, file values and CLI values (last wins)."""
    merged = {}
    for layer in (file_values or {}, cli_values or {}):
        for k, v in layer.items():
            if v is not None:
                key = canonical_key(k)
                merged[key] = _coerce(key, v)
    preset = merged.get("preset", RunConfig.preset)
    values = {**PRESET_DEFAULTS.get(preset, {}), **merged}
    run_kw = {k: v for k, v in values.items() if k in _RUN_FIELDS}
    opt_kw = {k: v for k, v in values.items() if k in _OPT_FIELDS}
    for k in ("penal_schedule", "beta_schedule"):
        if opt_kw.get(k) is not None:
            opt_kw[k] = tuple(opt_kw[k])
    cfg = RunConfig(**run_kw, opt=OptimizerConfig(**opt_kw))
    cfg.validate()
    return cfg


def build_problem(cfg: RunConfig) -> Problem:
    problem = make_problem(cfg.preset, cfg.nelx, cfg.nely)
    if problem.damage is not None:
        problem.damage = cfg.damage_model(problem)
    return problem


def load_position_model(cfg: RunConfig, problem: Problem) -> LoadPositionModel:
    """Dataset from ``cfg.dataset``, or a synthesized one seeded by ``cfg.seed``.

    The synthesis stream is keyed apart from the scenario-sequence stream of the same seed.
    """
    if cfg.dataset is not None:
        return load_dataset(cfg.dataset, problem.mesh.nelx)
    rng = np.random.default_rng([cfg.seed, DATASET_STREAM])
    return LoadPositionModel.from_dataset(synthesize_load_dataset(rng, problem.mesh.nelx),
                                          problem.mesh.nelx)


def build_run(cfg: RunConfig, seed: int | None = None) -> tuple[Problem, StochasticModel]:
    problem = build_problem(cfg)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    load_model = load_position_model(cfg, problem) if problem.uncertainty == "load" else None
    n_seq = cfg.opt.maxit * cfg.opt.bsz
    model = build_stochastic_model(problem, n_seq, rng, metric=cfg.metric,
                                   oversample=cfg.oversample, reduced_grid=cfg.reduced_grid,
                                   load_model=load_model, sequence_type=cfg.seq_type)
    return problem, model
