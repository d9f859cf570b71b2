"""Command-line entry points: simulate, fit, evaluate, oracle-check."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import __version__
from .dataio import (ConfigError, DataFormatError, RunConfig, load_config, load_trial,
                     write_json, write_table)
from .evaluation import cross_validate
from .kld import purity_oracle_suite
from .rules import ConstantBuilder, LsKldBuilder, changescore_builder
from .search import SearchOptions, run_search
from .simulation import DESK_SEARCH, run_grid
from .trajectory import BasisSpec

log = logging.getLogger("trajkld")

RESULT_COLUMNS = ("theta_deg", "p", "missingness", "n_train_per_group", "n_test", "n_reps",
                  "seed", "method", "mean_pcd", "sd_pcd", "n_ok", "n_fail")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parser():
    ap = _Parser(prog="trajkld", description="Trajectory-based treatment decision rules.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run the simulation grid")
    sim.add_argument("--config", help="YAML run configuration")
    sim.add_argument("--full-grid", action="store_true", help="4 x 4 x 3 cells, 200 reps")
    sim.add_argument("--reps", type=int, help="replications per cell")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", help="output directory")

    fit = sub.add_parser("fit", help="estimate the index vector on trial data")
    _data_args(fit)
    fit.add_argument("--degree", type=int)
    fit.add_argument("--out", required=True, help="model JSON path")

    ev = sub.add_parser("evaluate", help="cross-validated value of competing rules")
    _data_args(ev)
    ev.add_argument("--folds", type=int)
    ev.add_argument("--repeats", type=int)
    ev.add_argument("--degree", type=int)
    ev.add_argument("--lower-is-better", action="store_true",
                    help="outcome improves downward (e.g. a symptom score)")
    ev.add_argument("--out", required=True, help="fold-level IPWE CSV path")

    oc = sub.add_parser("oracle-check", help="closed-form purity vs Monte Carlo")
    oc.add_argument("--seed", type=int, default=0)
    oc.add_argument("--cases", type=int, default=50)
    oc.add_argument("--draws", type=int, default=100_000)
    return ap


def _data_args(p):
    p.add_argument("--outcomes", required=True, help="long-format CSV: subject_id,group,time,outcome")
    p.add_argument("--covariates", required=True, help="CSV: subject_id,x1,...,xp")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int)


def _resolve(args) -> RunConfig:
    """Config file values, then command-line overrides."""
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "degree", None) is not None:
        try:
            cfg = replace(cfg, basis=BasisSpec(args.degree))
        except ValueError as exc:
            raise ConfigError(f"--degree: {exc}") from None
    try:
        if getattr(args, "full_grid", False):
            cfg = replace(cfg, grid=replace(cfg.grid, full=True))
        if getattr(args, "reps", None) is not None:
            cfg = replace(cfg, grid=replace(cfg.grid, n_reps=args.reps),
                          scenarios=tuple(replace(s, n_reps=args.reps) for s in cfg.scenarios))
        if getattr(args, "folds", None) is not None:
            cfg = replace(cfg, cv=replace(cfg.cv, n_folds=args.folds))
        if getattr(args, "repeats", None) is not None:
            cfg = replace(cfg, cv=replace(cfg.cv, n_repeats=args.repeats))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if getattr(args, "lower_is_better", False):
        cfg = replace(cfg, lower_is_better=True)
    if getattr(args, "out", None) and args.command == "simulate":
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _metadata(command, cfg: RunConfig, **extra):
    meta = {"package": "trajkld", "version": __version__, "command": command,
            "seed": cfg.seed, "config": cfg.to_dict()}
    meta.update(extra)
    return meta


def cmd_simulate(args, cfg: RunConfig):
    if not cfg.out_dir:
        raise ConfigError("simulate needs an output directory (--out or output.dir)")
    search = cfg.search_options(DESK_SEARCH)
    scenarios = cfg.scenario_list()
    methods = {"ls-kld": LsKldBuilder(cfg.basis, search, cfg.lmm), "changescore": changescore_builder}
    log.info("running %d scenarios", len(scenarios))
    results = run_grid(scenarios, methods, cfg.basis, cfg.lmm)
    rows = [r.row() for r in results]
    meta = _metadata("simulate", cfg, search=asdict(search),
                     scenarios=[asdict(s) for s in scenarios])
    write_table(os.path.join(cfg.out_dir, "results.csv"), RESULT_COLUMNS, rows, meta)
    write_json(os.path.join(cfg.out_dir, "results.json"), {"results": rows}, meta)
    for r in results:
        s = r.scenario
        print(f"theta={s.theta_deg:g} p={s.p} {s.missingness:8s} {r.method:13s} "
              f"PCD {r.mean_pcd:.4f} (sd {r.sd_pcd:.4f}, {r.n_fail} failed)")
    return 0


def cmd_fit(args, cfg: RunConfig):
    data = load_trial(args.outcomes, args.covariates)
    search = cfg.search_options(SearchOptions())
    model, restarts = run_search(data, cfg.basis, search, cfg.lmm)
    payload = {"model": model.to_dict(),
               "restarts": [{"alpha": a, "purity": q} for a, q in restarts],
               "n_subjects": len(data.subjects)}
    write_json(args.out, payload, _metadata("fit", cfg, search=asdict(search),
                                            inputs=[args.outcomes, args.covariates]))
    print("alpha", np.array2string(model.alpha, precision=6), f"purity {model.purity:.6g}")
    return 0


def cmd_evaluate(args, cfg: RunConfig):
    data = load_trial(args.outcomes, args.covariates)
    search = cfg.search_options(SearchOptions())
    builders = {"ls-kld": LsKldBuilder(cfg.basis, search, cfg.lmm),
                "changescore": changescore_builder,
                "all-1": ConstantBuilder(1),
                "all-2": ConstantBuilder(2)}
    plan = replace(cfg.cv, seed=cfg.seed)
    rows, summary = [], {}
    for name, builder in builders.items():
        res = cross_validate(data, builder, plan, cfg.lower_is_better)
        rows.extend({"method": name, "repeat": r, "fold": f, "ipwe": v} for r, f, v in res.rows())
        summary[name] = {"mean": res.mean, "sd": res.sd, "n_failed": res.n_failed}
        print(f"{name:12s} IPWE {res.mean:.4f} (sd {res.sd:.4f}, {res.n_failed} folds failed)")
    n_early = res.n_early
    if n_early:
        print(f"{n_early} subjects lack an observation at the final design time; "
              "their last observed outcome was used")
    meta = _metadata("evaluate", cfg, search=asdict(search), cv=asdict(plan), summary=summary,
                     n_early=n_early, inputs=[args.outcomes, args.covariates])
    write_table(args.out, ("method", "repeat", "fold", "ipwe"), rows, meta)
    return 0


def cmd_oracle_check(args, cfg):
    if args.cases < 1 or args.draws < 10_000:
        raise ConfigError("need --cases >= 1 and --draws >= 10000")
    rep = purity_oracle_suite(args.seed, args.cases, args.draws)
    verdict = "PASS" if rep.passed else "FAIL"
    print(f"{verdict}: {rep.n_within}/{rep.n_cases} cases within 3 MC standard errors "
          f"(need {rep.required}; max |z| = {rep.max_z:.2f})")
    return 0 if rep.passed else 1


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate,
            "oracle-check": cmd_oracle_check}


def cli_main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = _resolve(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, DataFormatError) as exc:
        print(f"trajkld: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else 0
    except KeyboardInterrupt:
        print("trajkld: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # noqa: BLE001 - top-level diagnostic
        print(f"trajkld: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())
