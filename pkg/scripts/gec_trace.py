"""GEC-style ratio traces (a proxy, not the coefficient itself) on the MDP benchmark."""
import argparse
import csv
import math
from pathlib import Path

from mexrl.diagnostics import empirical_gec_ratio
from mexrl.envs import make_random_tabular_mdp
from mexrl.hypothesis import enumerate_tabular_model_class
from mexrl.mex import MexConfig, run_mex_mdp


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--episodes", type=int, default=1000)
    parser.add_argument("--out", type=Path, default=Path("gec_trace.csv"))
    args = parser.parse_args()
    ceiling = 10 * math.sqrt(25 * 2 * 5 * math.log(args.episodes))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "k", "ratio", "numerator", "denominator"])
        for seed in args.seeds:
            env = make_random_tabular_mdp(5, 2, 5, seed=seed)
            cls = enumerate_tabular_model_class(env, 64, seed=seed + 1)
            trace = empirical_gec_ratio(run_mex_mdp(env, cls, MexConfig(episodes=args.episodes, seed=seed)),
                                        env, cls)
            for k, (r, n, d) in enumerate(zip(trace.ratios, trace.numerators, trace.denominators), 1):
                w.writerow([seed, k, repr(float(r)), repr(float(n)), repr(float(d))])
            print(f"seed {seed}: max ratio {trace.ratios.max():.3f} (ceiling {ceiling:.1f}), "
                  f"diverging flag {trace.diverging}")


if __name__ == "__main__":
    main()
