"""Seeded batch of the model-based (or model-free) generalization check on the 5-state benchmark.

Writes one CSV row per run with the worst margin and violation flag.
"""
import argparse
import csv
from pathlib import Path

from mexrl.diagnostics import check_generalization_modelbased, check_generalization_modelfree
from mexrl.envs import make_random_tabular_mdp
from mexrl.hypothesis import enumerate_tabular_model_class, model_free_class_from_models
from mexrl.mex import MexConfig, run_mex_mdp


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--runs", type=int, default=100)
    parser.add_argument("--episodes", type=int, default=2000)
    parser.add_argument("--delta", type=float, default=0.05)
    parser.add_argument("--kind", choices=["model_based", "model_free"], default="model_based")
    parser.add_argument("--out", type=Path, default=Path("generalization.csv"))
    args = parser.parse_args()
    rows, violated = [], 0
    for seed in range(args.runs):
        env = make_random_tabular_mdp(5, 2, 5, seed=seed)
        cls = enumerate_tabular_model_class(env, 64, seed=seed + 1)
        check = check_generalization_modelbased
        if args.kind == "model_free":
            cls, check = model_free_class_from_models(cls, env), check_generalization_modelfree
        log = run_mex_mdp(env, cls, MexConfig(episodes=args.episodes, seed=seed))
        rep = check(log, env, cls, args.delta)
        violated += rep.violated
        rows.append([seed, int(rep.violated), repr(rep.min_margin), rep.worst_episode, rep.worst_index, rep.digest])
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "violated", "min_margin", "worst_episode", "worst_index", "digest"])
        w.writerows(rows)
    print(f"violation rate {violated / args.runs:.3f} over {args.runs} runs -> {args.out}")


if __name__ == "__main__":
    main()
