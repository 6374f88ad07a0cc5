"""Empirical-flow deviation of the N-player SIS game against the mean-field flow.

Solves the mean-field game (or loads a policy from a result.json), simulates
N-player episodes for each N and fits the log-log slope of the deviation.
"""

import argparse
import csv
import json
from pathlib import Path

import numpy as np

from cmfg.cmfomo import SolveConfig, solve
from cmfg.core import builtin_sis, check_policy
from cmfg.nplayer import NPlayerConfig, RateStudy, rate_study
from cmfg.svgplot import line_chart


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--policy", help="result.json with a 'policy' field (default: solve SIS)")
    ap.add_argument("--Ns", type=int, nargs="+", default=[10, 50, 100, 500])
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="rate")
    args = ap.parse_args()

    env = builtin_sis(T=10)
    if args.policy:
        pi = np.asarray(json.loads(Path(args.policy).read_text())["policy"], dtype=float)
        check_policy(pi, env.dims)
    else:
        pi = solve(env, SolveConfig()).policy
    study = rate_study(env, pi, args.Ns, NPlayerConfig(n_episodes=args.episodes, seed=args.seed))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "rate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RateStudy.CSV_COLUMNS)
        for r in study.rows:
            w.writerow([getattr(r, c) for c in RateStudy.CSV_COLUMNS])
            print(f"N={r.n_players:5d} deviation={r.deviation_mean:.4f} +- {r.deviation_stderr:.4f} "
                  f"gain={r.gain_mean:+.4f} +- {r.gain_stderr:.4f}")
    print(f"log-log slope {study.slope:.3f}")
    logn = np.log10([r.n_players for r in study.rows])
    fit = 10 ** (study.intercept / np.log(10) + study.slope * logn)
    (out / "rate.svg").write_text(
        line_chart(logn, {"measured": [r.deviation_mean for r in study.rows], "fit": fit},
                   "Empirical flow deviation vs N", "log10 N", "max_t mean |L^N_t - L_t|_1", log_y=True)
    )


if __name__ == "__main__":
    main()
