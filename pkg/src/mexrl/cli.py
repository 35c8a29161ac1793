"""Command line entry point: ``mexrl <subcommand> --config ... --seed ... --out ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .core import ConfigurationError, dump_env, is_stationary
from .diagnostics import (check_generalization_modelbased, check_generalization_modelfree,
                          empirical_gec_ratio)
from .envs import make_gridworld, make_linear_mixture_mg, make_random_tabular_mdp, make_random_tabular_mg
from .harness import compute_regret, load_config, load_runlog, run_suite
from .hypothesis import load_problem

# defaults used when --config is omitted; each mirrors a file under configs/
DEFAULTS = {
    "run-mdp": {
        "env": {"kind": "random_mdp", "n_states": 5, "n_actions": 2, "horizon": 5, "seed": 0},
        "class": {"kind": "model_based", "size": 64},
        "algo": {"algorithms": ["mex", "epsilon_greedy"], "episodes": 5000, "eta": "theory",
                 "epsilon": 0.1},
        "sweep": {"seeds": [0]},
        "accept": {"max_exponent": 0.75, "min_r_squared": 0.9},
    },
    "run-mg": {
        "env": {"kind": "random_mg", "n_states": 3, "n_actions": 2, "n_min_actions": 2,
                "horizon": 3, "seed": 0},
        "class": {"kind": "model_based", "size": 32},
        "algo": {"algorithms": ["mex"], "episodes": 3000, "eta": "theory"},
        "sweep": {"seeds": [0]},
        "accept": {"max_exponent": 0.8},
    },
    "sweep-eta": {
        "env": {"kind": "random_mdp", "n_states": 5, "n_actions": 2, "horizon": 5, "seed": 0},
        "class": {"kind": "model_based", "size": 64},
        "algo": {"algorithms": ["mex"], "episodes": 2000, "eta": "theory"},
        "sweep": {"seeds": [0], "eta_scales": [0.1, 0.3, 1.0, 3.0, 10.0]},
        "accept": {},
    },
    "gridworld": {
        "env": {"kind": "gridworld", "size": 10, "horizon": 200, "noise": 0.2},
        "class": {"kind": "model_based"},
        "algo": {"algorithms": ["mex", "epsilon_greedy"], "episodes": 1000, "eta": "theory",
                 "epsilon": 0.1},
        "sweep": {"seeds": [0]},
        "accept": {"min_final_return": 9.0, "return_window": 100, "min_seeds_beating_baseline": 1},
    },
}


def _cell_dirs(artifact: Path):
    return sorted(p for p in (artifact / "cells").iterdir() if p.is_dir())


def verify_artifact(artifact, delta: float = 0.05, tol: float = 1e-10) -> dict:
    """Re-derive regret and run the generalization checks on every cell of an artifact dir."""
    artifact = Path(artifact)
    env, cls = load_problem(artifact / "problem.json")
    out = {"artifact": str(artifact), "delta": delta, "cells": {}}
    for cell in _cell_dirs(artifact):
        runlog = load_runlog(cell, cls, env.horizon)
        curve = compute_regret(runlog, env, cls)
        err = float(np.max(np.abs(curve.gaps - runlog.gaps))) if len(runlog) else 0.0
        entry = {"regret_recomputed": {"passed": err <= tol, "max_abs_error": err}}
        if cls.true_index is not None and runlog.algorithm != "epsilon-greedy":
            check = (check_generalization_modelbased if cls.kind == "model_based"
                     else check_generalization_modelfree)
            rep = check(runlog, env, cls, delta)
            entry["generalization"] = {"passed": not rep.violated, **rep.to_dict()}
        if not env.is_game and runlog.algorithm != "epsilon-greedy":
            trace = empirical_gec_ratio(runlog, env, cls)
            entry["gec_proxy"] = {"final_ratio": float(trace.ratios[-1]) if len(trace.ratios) else 0.0,
                                  "max_ratio": float(trace.ratios.max()) if len(trace.ratios) else 0.0,
                                  "diverging": trace.diverging, "label": trace.label}
        entry["passed"] = all(v["passed"] for v in entry.values() if isinstance(v, dict) and "passed" in v)
        out["cells"][cell.name] = entry
    out["passed"] = all(c["passed"] for c in out["cells"].values())
    (artifact / "verify.json").write_text(json.dumps(out, indent=2, sort_keys=True))
    return out


def _dump_generated(args) -> int:
    if args.kind == "random_mdp":
        env = make_random_tabular_mdp(args.n_states, args.n_actions, args.horizon, args.seed)
    elif args.kind == "random_mg":
        env = make_random_tabular_mg(args.n_states, args.n_actions, args.n_min_actions,
                                     args.horizon, args.seed)
    elif args.kind == "linear_mixture_mg":
        env = make_linear_mixture_mg(args.d, args.n_states, args.n_actions, args.n_min_actions,
                                     args.horizon, args.seed)[0]
    else:
        env = make_gridworld(horizon=args.horizon)
    dump_env(env, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mexrl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*DEFAULTS, "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML config; built-in default if omitted")
        p.add_argument("--seed", type=int, nargs="+", help="override the [sweep] seeds")
        p.add_argument("--out", type=Path, required=True, help="artifact directory")
        if name == "verify":
            p.add_argument("--delta", type=float, default=0.05)
    g = sub.add_parser("dump-env", help="write a generated environment as JSON")
    g.add_argument("kind", choices=["random_mdp", "random_mg", "linear_mixture_mg", "gridworld"])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--n-states", type=int, default=5)
    g.add_argument("--n-actions", type=int, default=2)
    g.add_argument("--n-min-actions", type=int, default=2)
    g.add_argument("--horizon", type=int, default=5)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--config", type=Path, help="unused; accepted for a uniform interface")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "dump-env":
            return _dump_generated(args)
        if args.command == "verify":
            if args.config is not None:
                load_config(args.config)
            report = verify_artifact(args.out, args.delta)
            print(json.dumps({k: v["passed"] for k, v in report["cells"].items()}, indent=2))
            return 0 if report["passed"] else 1
        config = args.config if args.config is not None else DEFAULTS[args.command]
        code = run_suite(config, args.out, seeds=args.seed)
        summary = json.loads((args.out / "summary.json").read_text())
        for name, check in summary["acceptance"].items():
            print(f"{'PASS' if check['passed'] else 'FAIL'} {name}")
        return code
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
