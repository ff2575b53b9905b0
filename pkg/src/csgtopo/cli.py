"""Command-line entry point: ``csgtopo {run,evaluate,ensemble,integration-study,synth-dataset}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .csg import WeightDump
from .evaluation import ensemble_quantiles, exact_expected_compliance, integration_error_study
from .export import HistoryWriter, export_design, read_field, write_field
from .optimizer import run_optimization
from .scenarios import enumerate_damage_grid, synthesize_load_dataset, write_dataset

log = logging.getLogger("csgtopo")

# flag -> config key; flags mirror the positional signature of the reference driver
SIGNATURE = [("nelx", int), ("nely", int), ("volfrac", float), ("penal", float), ("rmin", float),
             ("ft", int), ("ftBC", str), ("eta", float), ("beta", float), ("move", float),
             ("pnorm", float), ("maxit", int)]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(cfgmod.PRESETS))
    p.add_argument("--config", help="flat key=value file; CLI flags override it")
    for name, typ in SIGNATURE:
        p.add_argument(f"--{name}", type=typ, dest=name)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--type", dest="seq_type", choices=["distribution", "uniform"])
    p.add_argument("--dataset", help="load-position dataset (one top-node index per line)")
    p.add_argument("--bsz", type=int)
    p.add_argument("--maxsmpl", type=int)
    p.add_argument("--symmetrize", dest="symmetrize_dc", action="store_const", const=True)
    p.add_argument("--metric", choices=["plain", "symmetric"])
    p.add_argument("--oversample", action="store_const", const=True)
    p.add_argument("--reduced-grid", dest="reduced_grid", action="store_const", const=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration constant (repeatable)")


def resolve(args: argparse.Namespace) -> cfgmod.RunConfig:
    file_values = cfgmod.read_config_file(args.config) if args.config else {}
    keys = [n for n, _ in SIGNATURE] + ["preset", "seed", "out", "seq_type", "dataset", "bsz",
                                        "maxsmpl", "symmetrize_dc", "metric", "oversample",
                                        "reduced_grid", "eval_cadence"]
    cli = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    extra = cfgmod.parse_config_text("\n".join(args.set))
    return cfgmod.resolve_config(file_values, {**cli, **extra})


def cmd_run(args) -> int:
    cfg = resolve(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_config_file(cfg, out / "config.txt")
    problem, model = cfgmod.build_run(cfg)
    mesh = problem.mesh
    evals = []

    def on_iter(loop, state):
        if cfg.eval_cadence and loop % cfg.eval_cadence == 0 and loop < cfg.opt.maxit:
            rep = exact_expected_compliance(problem, state.x_phys, model.grid)
            evals.append((loop, rep.E))
            log.info("iteration %d: exact expectation %.6g", loop, rep.E)

    dump = WeightDump(out / "weights.csv") if args.dump_weights else None
    with HistoryWriter(out / "history.csv") as hw:
        result = run_optimization(cfg.opt, problem, model, callback=on_iter, history_writer=hw,
                                  weight_dump=dump, verbose=True)
    x = result.state.x_phys
    export_design(x, mesh.nelx, mesh.nely, out / "design.pgm")
    write_field(x, mesh.nelx, mesh.nely, out / "design.txt")
    report = exact_expected_compliance(problem, x, model.grid, penal=cfg.opt.penal,
                                       J=result.J_final)
    evals.append((cfg.opt.maxit, report.E))
    np.savetxt(out / "scenario_compliance.txt", report.compliances, fmt="%.17g")
    (out / "evaluations.csv").write_text(
        "loop,E\n" + "".join(f"{loop},{e:.17g}\n" for loop, e in evals))
    (out / "evaluation.json").write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    print(f"E={report.E:.6g} J={report.J:.6g} gap={report.gap:.4f} solves={result.n_solves}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve(args)
    problem, model = cfgmod.build_run(cfg)
    x = read_field(args.field, problem.mesh.nelx, problem.mesh.nely)
    report = exact_expected_compliance(problem, x, model.grid, penal=cfg.opt.penal, J=args.J)
    if args.compliances:
        np.savetxt(args.compliances, report.compliances, fmt="%.17g")
    print(json.dumps(report.as_dict()))
    return 0


def cmd_ensemble(args) -> int:
    cfg = resolve(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    table = ensemble_quantiles(cfg, args.runs, tuple(args.q), args.cadence,
                               partial_path=out / "quantiles_partial.csv")
    table.write_csv(out / "quantiles.csv")
    np.savetxt(out / "ensemble_values.txt", table.values, fmt="%.17g")
    print((out / "quantiles.csv").read_text(), end="")
    return 0


def cmd_integration_study(args) -> int:
    cfg = resolve(args)
    problem = cfgmod.build_problem(cfg)
    d = problem.damage
    if d is None:
        raise SystemExit("integration-study needs a damage preset")
    grid = enumerate_damage_grid(problem.mesh.nelx, problem.mesh.nely, d.L, d.non_d, d.non_r)
    x = read_field(args.field, problem.mesh.nelx, problem.mesh.nely)
    c = exact_expected_compliance(problem, x, grid, penal=cfg.opt.penal).compliances
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = ("plain", "symmetric")
    mean = {m: np.zeros(args.steps) for m in metrics}
    for s in range(args.seeds):
        study = integration_error_study(problem, grid, c, args.steps,
                                        np.random.default_rng(cfg.seed + s), metrics)
        for m in metrics:
            mean[m] += study.errors[m] / args.seeds
    rows = ["n,plain,symmetric"] + [f"{n + 1},{mean['plain'][n]:.17g},{mean['symmetric'][n]:.17g}"
                                    for n in range(args.steps)]
    (out / "integration_error.csv").write_text("\n".join(rows) + "\n")
    print(f"final mean relative error: plain={mean['plain'][-1]:.4g} "
          f"symmetric={mean['symmetric'][-1]:.4g}")
    return 0


def cmd_synth_dataset(args) -> int:
    rng = np.random.default_rng([args.seed, cfgmod.DATASET_STREAM])
    data = synthesize_load_dataset(rng, args.nelx)
    write_dataset(args.output, data)
    print(f"wrote {data.size} load positions to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="csgtopo", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="optimize a preset and write history, design and evaluation")
    _add_common(p)
    p.add_argument("--eval-cadence", dest="eval_cadence", type=int,
                   help="exact evaluation every N iterations (0: final only)")
    p.add_argument("--dump-weights", action="store_true", help="write per-slot integration weights")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="exact expected compliance of a stored field")
    _add_common(p)
    p.add_argument("--field", required=True,
                   help="design.txt written by run (nely rows of nelx values)")
    p.add_argument("--J", type=float, help="model estimate to compare against")
    p.add_argument("--compliances", help="write per-scenario compliances here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", help="quantiles of the exact expectation over repeated runs")
    _add_common(p)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--q", type=float, nargs="+", default=[0.1, 0.5, 0.9])
    p.add_argument("--cadence", type=int, default=50)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("integration-study", help="integration error on a frozen design")
    _add_common(p)
    p.add_argument("--field", required=True, help="design.txt from a run")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_integration_study)

    p = sub.add_parser("synth-dataset", help="write a synthetic load-position dataset")
    p.add_argument("--nelx", type=int, default=360)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="load_dataset.txt")
    p.set_defaults(func=cmd_synth_dataset)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
