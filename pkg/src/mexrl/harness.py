"""Experiment orchestration: oracle regret, baselines, power-law fits, suites and artifacts."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (ConfigurationError, Episode, Policy, dump_env, initial_value,
                   policy_evaluation, sample_episode)
from .envs import (gridworld_model_class, make_gridworld, make_linear_mixture_mg,
                   make_random_tabular_mdp, make_random_tabular_mg)
from .hypothesis import (HypothesisClass, build_linear_mixture_class, dump_problem,
                         enumerate_tabular_model_class, model_free_class_from_models,
                         simplex_theta_grid)
from .losses import make_ledger
from .mex import (MexConfig, RunLog, _GapOracle, default_eta, eta_from_theory, predicted_policy,
                  run_mex_mdp, run_mex_mg)
from .planner import best_response_value_iteration, ne_value_iteration, plan_optimal

log = logging.getLogger(__name__)

__all__ = ["compute_regret", "fit_power_law", "eta_from_theory", "baseline_epsilon_greedy",
           "run_suite", "RegretCurve", "PowerLawFit"]


@dataclass
class RegretCurve:
    gaps: np.ndarray
    cumulative: np.ndarray


def compute_regret(runlog: RunLog, env, cls: HypothesisClass) -> RegretCurve:
    """Recompute every per-episode gap from scratch with exact policy evaluation.

    MDP runs: V*(x1) - V^{pi}(x1) for the predicted policy (the ε-mixture for
    the ε-greedy baseline). MG runs: V*(x1) - V^{mu^k, dagger}(x1).
    """
    gaps = np.zeros(len(runlog))
    if env.is_game:
        v_star = initial_value(env, ne_value_iteration(env)[0].V)
        for k, i in enumerate(runlog.selected):
            br = best_response_value_iteration(env, cls[int(i)].max_policy)[0].V
            gaps[k] = v_star - initial_value(env, br)
    else:
        v_star = initial_value(env, plan_optimal(env)[0].V)
        eps = runlog.config.get("epsilon") if runlog.algorithm == "epsilon-greedy" else None
        for k, i in enumerate(runlog.selected):
            pi = predicted_policy(cls[int(i)])
            if eps is not None:
                pi = epsilon_mixture(pi, eps)
            gaps[k] = v_star - initial_value(env, policy_evaluation(env, pi).V)
    return RegretCurve(gaps, np.cumsum(gaps))


@dataclass
class PowerLawFit:
    coefficient: float
    exponent: float
    r_squared: float
    n_points: int
    n_dropped: int
    degenerate: bool
    window: str = "second half"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def fit_power_law(curve, min_length: int = 50) -> PowerLawFit:
    """Least squares of log R_k on log k over the second half of a cumulative curve.

    Nonpositive points are dropped (and counted). A tail that is exactly
    constant is fit perfectly by slope 0, so r^2 = 1 in that case.
    """
    y = np.asarray(curve, dtype=float)
    if len(y) < min_length:
        raise ValueError(f"curve needs at least {min_length} points, got {len(y)}")
    k = np.arange(1, len(y) + 1, dtype=float)
    start = len(y) // 2
    k, y = k[start:], y[start:]
    keep = y > 0
    dropped = int(np.count_nonzero(~keep))
    if keep.sum() < 2:
        return PowerLawFit(0.0, 0.0, 0.0, int(keep.sum()), dropped, True)
    lx, ly = np.log(k[keep]), np.log(y[keep])
    b, log_a = np.polyfit(lx, ly, 1)
    resid = ly - (log_a + b * lx)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 if ss_tot <= 1e-24 else 1.0 - ss_res / ss_tot
    return PowerLawFit(float(math.exp(log_a)), float(b), float(r2), int(keep.sum()), dropped, False)


def epsilon_mixture(policy: Policy, epsilon: float) -> Policy:
    return Policy((1.0 - epsilon) * policy.probs + epsilon / policy.n_actions)


def baseline_epsilon_greedy(env, cls: HypothesisClass, epsilon: float, episodes: int,
                            seed: int) -> RunLog:
    """Certainty-equivalent control with ε-uniform actions.

    Each episode plays the plan of the current loss minimizer (the
    maximum-likelihood model for model classes), mixed with uniform actions
    at rate ε. Regret is charged for the policy actually executed.
    """
    if env.is_game:
        raise ConfigurationError("the ε-greedy baseline is defined for MDPs")
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigurationError("epsilon must lie in [0, 1]")
    K, H, M = episodes, env.horizon, len(cls)
    rng = np.random.default_rng(seed)
    ledger = make_ledger(cls)
    oracle = _GapOracle(env, cls)
    policies, gap_cache = {}, {}
    selected = np.zeros(K, dtype=np.int64)
    returns, gaps, objectives = np.zeros(K), np.zeros(K), np.zeros(K)
    losses = np.zeros((K, H, M))
    episodes_out: list[Episode] = []
    for k in range(K):
        snapshot = ledger.values
        losses[k] = snapshot
        totals = snapshot.sum(axis=0)
        i = int(np.argmin(totals))
        if i not in policies:
            policies[i] = epsilon_mixture(predicted_policy(cls[i]), epsilon)
            gap_cache[i] = oracle.optimal - initial_value(env, policy_evaluation(env, policies[i]).V)
        ep = sample_episode(env, policies[i], rng, mode="epsilon")
        ledger.update(ep)
        episodes_out.append(ep)
        selected[k] = i
        returns[k] = ep.total_return
        gaps[k] = gap_cache[i]
        objectives[k] = -totals[i]
    return RunLog(selected, np.full(K, -1, dtype=np.int64), returns, gaps, objectives, losses, 0.0,
                  oracle.optimal, "epsilon-greedy", "epsilon", episodes=episodes_out,
                  config={"epsilon": epsilon, "episodes": episodes, "seed": seed})


# -- CSV / JSON artifacts --------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def write_regret_csv(path, runlog: RunLog) -> None:
    cum = runlog.cumulative_regret
    _write_csv(Path(path), ["k", "gap", "cum_regret"],
               ((k + 1, runlog.gaps[k], cum[k]) for k in range(len(runlog))))


def write_runlog_csv(path, runlog: RunLog) -> None:
    cum = runlog.cumulative_regret
    game = runlog.min_selected is not None
    header = ["k", "f_index"] + (["g_index"] if game else []) + \
        ["explore_step", "return", "gap", "cum_regret", "objective", "eta"]
    rows = []
    for k in range(len(runlog)):
        row = [k + 1, runlog.selected[k]] + ([runlog.min_selected[k]] if game else [])
        row += [runlog.explore_steps[k], runlog.returns[k], runlog.gaps[k], cum[k],
                runlog.objectives[k], runlog.eta]
        rows.append(row)
    _write_csv(Path(path), header, rows)


def write_trajectories_csv(path, runlog: RunLog) -> None:
    rows = []
    for k, ep in enumerate(runlog.episodes):
        for d in ep:
            rows.append([k + 1, d.h + 1, d.x, d.a, -1 if d.b is None else d.b, d.r, d.x_next])
    _write_csv(Path(path), ["k", "h", "x", "a", "b", "r", "x_next"], rows)


def write_ledger_csv(path, runlog: RunLog, every: Optional[int] = None) -> None:
    """Snapshots (k, h, hypothesis_index, L_value); ``k`` counts absorbed episodes."""
    K = len(runlog)
    every = every or max(1, K // 10)
    ks = sorted(set(range(0, K, every)) | {K - 1}) if K else []
    rows = []
    for k in ks:
        snap = runlog.losses[k]
        for h in range(snap.shape[0]):
            for i in range(snap.shape[1]):
                rows.append([k, h + 1, i, snap[h, i]])
    _write_csv(Path(path), ["k", "h", "hypothesis_index", "L_value"], rows)


def read_trajectories(path, horizon: int, game: bool) -> list:
    rows = list(csv.DictReader(Path(path).read_text().splitlines()))
    episodes = []
    for start in range(0, len(rows), horizon):
        chunk = rows[start:start + horizon]
        states = [int(r["x"]) for r in chunk] + [int(chunk[-1]["x_next"])]
        episodes.append(Episode(np.array(states), np.array([int(r["a"]) for r in chunk]),
                                np.array([float(r["r"]) for r in chunk]),
                                np.array([int(r["b"]) for r in chunk]) if game else None))
    return episodes


def load_runlog(cell_dir, cls: HypothesisClass, horizon: int) -> RunLog:
    """Rebuild a RunLog from a cell directory, replaying the ledger from the trajectories."""
    cell_dir = Path(cell_dir)
    meta = json.loads((cell_dir / "cell.json").read_text())
    rows = list(csv.DictReader((cell_dir / "runlog.csv").read_text().splitlines()))
    game = "g_index" in (rows[0] if rows else {})
    episodes = read_trajectories(cell_dir / "trajectories.csv", horizon, game)
    ledger = make_ledger(cls)
    losses = np.zeros((len(rows), horizon, len(cls)))
    for k, ep in enumerate(episodes):
        losses[k] = ledger.values
        ledger.update(ep)
    f = lambda key: np.array([float(r[key]) for r in rows])
    return RunLog(np.array([int(r["f_index"]) for r in rows]),
                  np.array([int(r["explore_step"]) for r in rows]),
                  f("return"), f("gap"), f("objective"), losses, meta["eta"],
                  meta["optimal_value"], meta["algorithm"], meta["exploration"],
                  np.array([int(r["g_index"]) for r in rows]) if game else None,
                  episodes=episodes, config=meta.get("config", {}))


# -- suites ------------------------------------------------------------------

KNOWN_SECTIONS = {
    "env": {"kind", "n_states", "n_actions", "n_min_actions", "horizon", "seed", "sparsity",
            "noise", "size", "d"},
    "class": {"kind", "size", "magnitude", "grid", "seed", "resolution", "noises"},
    "algo": {"algorithms", "episodes", "eta", "exploration", "epsilon", "delta", "eta_constant"},
    "sweep": {"seeds", "eta_scales"},
    "accept": {"max_exponent", "min_r_squared", "min_seeds_beating_baseline", "min_final_return",
               "return_window", "max_generalization_violation_rate"},
}


def _load_toml(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def validate_config(cfg: dict) -> dict:
    for section, body in cfg.items():
        if section not in KNOWN_SECTIONS:
            raise ConfigurationError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigurationError(f"[{section}] must be a table")
        for key in body:
            if key not in KNOWN_SECTIONS[section]:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]")
    for required in ("env", "class", "algo"):
        if required not in cfg:
            raise ConfigurationError(f"missing config section [{required}]")
    return cfg


def build_problem(env_cfg: dict, class_cfg: dict):
    """Environment and hypothesis class from config tables."""
    kind = env_cfg.get("kind", "random_mdp")
    seed = int(env_cfg.get("seed", 0))
    H = int(env_cfg.get("horizon", 5))
    if kind == "random_mdp":
        env = make_random_tabular_mdp(int(env_cfg.get("n_states", 5)), int(env_cfg.get("n_actions", 2)),
                                      H, seed, float(env_cfg.get("sparsity", 0.3)))
    elif kind == "random_mg":
        env = make_random_tabular_mg(int(env_cfg.get("n_states", 3)), int(env_cfg.get("n_actions", 2)),
                                     int(env_cfg.get("n_min_actions", 2)), H, seed)
    elif kind == "gridworld":
        env = make_gridworld(size=int(env_cfg.get("size", 10)), horizon=int(env_cfg.get("horizon", 200)),
                             noise=float(env_cfg.get("noise", 0.2)))
    elif kind == "linear_mixture_mg":
        env, phi, theta = make_linear_mixture_mg(int(env_cfg.get("d", 2)), int(env_cfg.get("n_states", 3)),
                                                 int(env_cfg.get("n_actions", 2)),
                                                 int(env_cfg.get("n_min_actions", 2)), H, seed)
    else:
        raise ConfigurationError(f"unknown environment kind {kind!r} in [env]")

    ckind = class_cfg.get("kind", "model_based")
    cseed = int(class_cfg.get("seed", seed + 1))
    if kind == "gridworld":
        cls = gridworld_model_class(env, tuple(class_cfg.get("noises", (0.1, 0.2, 0.3))), cseed)
    elif kind == "linear_mixture_mg":
        grid = simplex_theta_grid(len(theta), int(class_cfg.get("resolution", 4)))
        cls = build_linear_mixture_class(phi, grid, env.rewards, env.initial_state, theta)
    else:
        cls = enumerate_tabular_model_class(env, int(class_cfg.get("size", 64)),
                                            magnitude=float(class_cfg.get("magnitude", 0.5)),
                                            grid=class_cfg.get("grid"), seed=cseed)
    if ckind == "model_free":
        cls = model_free_class_from_models(cls, env)
    elif ckind != "model_based":
        raise ConfigurationError(f"unknown class kind {ckind!r} in [class]")
    return env, cls


def _reward_scale(env) -> float:
    return float(env.metadata.get("reward_scale", 1.0))


def _run_cell(env, cls, algo: str, algo_cfg: dict, seed: int, eta_scale: float) -> RunLog:
    K = int(algo_cfg.get("episodes", 1000))
    if algo == "epsilon_greedy":
        return baseline_epsilon_greedy(env, cls, float(algo_cfg.get("epsilon", 0.1)), K, seed)
    if algo != "mex":
        raise ConfigurationError(f"unknown algorithm {algo!r} in [algo]")
    eta = algo_cfg.get("eta", "theory")
    delta = float(algo_cfg.get("delta", 0.05))
    base = default_eta(cls, K, delta, float(algo_cfg.get("eta_constant", 1.0))) \
        if eta == "theory" else float(eta)
    cfg = MexConfig(episodes=K, eta=base * eta_scale, exploration=algo_cfg.get("exploration", "q"),
                    seed=seed, delta=delta)
    return run_mex_mg(env, cls, cfg) if env.is_game else run_mex_mdp(env, cls, cfg)


def write_cell(cell_dir: Path, runlog: RunLog, env, meta: dict) -> None:
    cell_dir.mkdir(parents=True, exist_ok=True)
    write_regret_csv(cell_dir / "regret.csv", runlog)
    write_runlog_csv(cell_dir / "runlog.csv", runlog)
    write_trajectories_csv(cell_dir / "trajectories.csv", runlog)
    write_ledger_csv(cell_dir / "ledger.csv", runlog)
    (cell_dir / "cell.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _cell_summary(runlog: RunLog, env, accept: dict) -> dict:
    scale = _reward_scale(env)
    window = int(accept.get("return_window", 100))
    fit = fit_power_law(runlog.cumulative_regret) if len(runlog) >= 50 else None
    return {
        "final_regret": float(runlog.cumulative_regret[-1]) if len(runlog) else 0.0,
        "mean_return": float(runlog.returns.mean() * scale) if len(runlog) else 0.0,
        "final_window_return": float(runlog.returns[-window:].mean() * scale) if len(runlog) else 0.0,
        "fit": None if fit is None else fit.to_dict(),
        "eta": runlog.eta,
    }


def evaluate_acceptance(cells: list, accept: dict) -> dict:
    """Pass/fail of the declared thresholds; each check lists its per-seed evidence."""
    checks = {}
    mex = [c for c in cells if c["algorithm"] == "mex" and c["eta_scale"] == 1.0]
    base = {c["seed"]: c for c in cells if c["algorithm"] == "epsilon_greedy"}
    if "max_exponent" in accept:
        ok = [c["summary"]["fit"] is not None and
              c["summary"]["fit"]["exponent"] <= accept["max_exponent"] for c in mex]
        checks["regret_exponent"] = {"passed": bool(mex) and all(ok), "per_seed": ok}
    if "min_r_squared" in accept:
        ok = [c["summary"]["fit"] is not None and
              c["summary"]["fit"]["r_squared"] >= accept["min_r_squared"] for c in mex]
        checks["fit_quality"] = {"passed": bool(mex) and all(ok), "per_seed": ok}
    if "min_final_return" in accept:
        ok = [c["summary"]["final_window_return"] >= accept["min_final_return"] for c in mex]
        checks["final_return"] = {"passed": bool(mex) and all(ok), "per_seed": ok}
    if "min_seeds_beating_baseline" in accept and base:
        metric = "mean_return" if "min_final_return" in accept else "final_regret"
        wins = []
        for c in mex:
            b = base.get(c["seed"])
            if b is None:
                continue
            if metric == "mean_return":
                wins.append(b["summary"]["mean_return"] < c["summary"]["mean_return"])
            else:
                wins.append(c["summary"]["final_regret"] < b["summary"]["final_regret"])
        checks["beats_baseline"] = {"passed": sum(wins) >= accept["min_seeds_beating_baseline"],
                                    "per_seed": wins, "metric": metric}
    return checks


def load_config(config) -> dict:
    """A validated config from a TOML path or an already-parsed mapping."""
    if isinstance(config, (str, Path)):
        config = _load_toml(config)
    return validate_config(json.loads(json.dumps(config)))


def run_suite(config, out_dir, seeds=None) -> int:
    """Run every (algorithm, eta scale, seed) cell of a config; return 0 iff all checks pass.

    ``seeds`` overrides the [sweep] seed list.
    """
    cfg = load_config(config)
    if seeds is not None:
        cfg.setdefault("sweep", {})["seeds"] = [int(s) for s in seeds]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env, cls = build_problem(cfg["env"], cfg["class"])
    dump_problem(env, cls, out / "problem.json")
    oracle_path = out / "oracle.json"
    if oracle_path.exists():
        oracle = json.loads(oracle_path.read_text())
    else:
        vt = ne_value_iteration(env)[0] if env.is_game else plan_optimal(env)[0]
        oracle = {"optimal_value": initial_value(env, vt.V), "V": vt.V.tolist()}
        oracle_path.write_text(json.dumps(oracle))
    algo_cfg = cfg["algo"]
    sweep = cfg.get("sweep", {})
    accept = cfg.get("accept", {})
    seeds = sweep.get("seeds", [0])
    scales = sweep.get("eta_scales", [1.0])
    algorithms = algo_cfg.get("algorithms", ["mex"])
    cells = []
    for algo in algorithms:
        for scale in (scales if algo == "mex" else [1.0]):
            for seed in seeds:
                runlog = _run_cell(env, cls, algo, algo_cfg, int(seed), float(scale))
                name = f"{algo}-eta{scale:g}-seed{seed}"
                meta = {"algorithm": runlog.algorithm, "exploration": runlog.exploration,
                        "eta": runlog.eta, "optimal_value": runlog.optimal_value,
                        "seed": int(seed), "eta_scale": float(scale), "config": runlog.config}
                write_cell(out / "cells" / name, runlog, env, meta)
                summary = _cell_summary(runlog, env, accept)
                cells.append({"name": name, "algorithm": algo, "seed": int(seed),
                              "eta_scale": float(scale), "summary": summary})
                log.info("%s: final regret %.4f", name, summary["final_regret"])
    checks = evaluate_acceptance(cells, accept)
    passed = all(c["passed"] for c in checks.values())
    summary = {"config": cfg, "oracle_value": oracle["optimal_value"], "cells": cells,
               "fit_window": "second half of the cumulative regret curve",
               "acceptance": checks, "passed": passed}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if passed else 1
