"""Infected-mass trajectories of solved SIS games for several thresholds and constraint kinds.

Writes one CSV with every trajectory and one SVG chart per constraint kind.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from cmfg.cmfomo import SolveConfig, solve, solve_population
from cmfg.core import CONSTRAINT_KINDS, builtin_sis, flow_from_policy, without_constraints
from cmfg.svgplot import line_chart


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.2, 0.3, 0.5, 1.0])
    ap.add_argument("--kinds", nargs="+", default=list(CONSTRAINT_KINDS), choices=CONSTRAINT_KINDS)
    ap.add_argument("--iters", type=int, default=20000)
    ap.add_argument("--out-dir", default="trajectories")
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SolveConfig(max_iters=args.iters)
    T1 = 11
    rows = []
    free = without_constraints(builtin_sis(T=10))
    base = flow_from_policy(solve(free, cfg).policy, free)[:, 1, :].sum(axis=1)
    for kind in args.kinds:
        series = {"unconstrained": base}
        for g in args.gammas:
            env = builtin_sis(T=10, gamma0=g, constraint_kind=kind)
            res = solve_population(env, cfg) if env.population_level else solve(env, cfg)
            infected = flow_from_policy(res.policy, env)[:, 1, :].sum(axis=1)
            series[f"gamma0={g:g}"] = infected
            rows += [[kind, g, t, infected[t], res.objective] for t in range(T1)]
            print(f"{kind:13s} gamma0={g:<5g} objective={res.objective:.3e} avg infected={infected.mean():.4f}")
        (out / f"infected_{kind}.svg").write_text(
            line_chart(np.arange(T1), series, f"Infected mass ({kind})", "t", "mass")
        )
    with open(out / "trajectories.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["constraint", "gamma0", "t", "infected", "objective"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
