"""Command-line interface: ``cmfg {solve,sweep,nplayer,bounds,certify}``.

Exit codes: 0 success, 2 invalid input, 3 solver did not converge (or a
certificate check failed), 4 some sweep members failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import logging
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import lp as lpmod
from .cmfomo import CmfomoCoeffs, SolveConfig, SolveResult, certify_from_policy, solve, solve_population
from .core import (
    CONSTRAINT_KINDS,
    SIS_ACTIONS,
    SIS_STATES,
    EnvironmentModel,
    ValidationError,
    builtin_sis,
    check_policy,
    flow_from_policy,
    load_env_file,
    two_step_sis,
    uniform_policy,
)
from .metrics import bound_constants, gaps
from .nplayer import NPlayerConfig, RateStudy, epsilon_ne_certificate, rate_study
from .svgplot import line_chart

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_PARTIAL = 0, 2, 3, 4
VERSION = "0.1.0"

log = logging.getLogger("cmfg")


# ---------------------------------------------------------------------------
# Small helpers


def _configure_logging() -> None:
    level = os.environ.get("CMFG_LOG", "warning").upper()
    if level not in ("ERROR", "WARNING", "INFO", "DEBUG"):
        level = "WARNING"
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("list must be nonempty")
    if not all(math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError(f"values must be finite, got {text!r}")
    return vals


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("list must be nonempty")
    return vals


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _csv_cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "" if not np.isfinite(x) else repr(float(x))
    return str(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_csv_cell(v) for v in row])


def _version() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{VERSION}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return VERSION


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int, started: float, files: list[str]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "version": _version(),
        "seed": seed,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "wall_clock_seconds": round(time.time() - started, 3),
        "outputs": sorted(files),
    }
    tmp = out_dir / "manifest.json.tmp"
    _write_json(tmp, manifest)
    tmp.replace(out_dir / "manifest.json")


# ---------------------------------------------------------------------------
# Environment and policy ingestion


def _env_from_args(args, gamma0: Optional[float] = None) -> EnvironmentModel:
    if args.env:
        if not Path(args.env).is_file():
            raise ValidationError(f"environment file not found: {args.env}")
        env = load_env_file(args.env)
        if gamma0 is not None:
            env = env.with_gamma0(np.full(env.dims.n_constraints, gamma0))
        elif args.gamma0 is not None:
            env = env.with_gamma0(np.full(env.dims.n_constraints, args.gamma0))
        return env
    g = args.gamma0 if gamma0 is None else gamma0
    if args.builtin == "two_step":
        if args.constraint == "agent_action":
            raise ValidationError("two_step supports only agent_state and pop_state constraints")
        return two_step_sis(0.8 if g is None else g, population_level=args.constraint == "pop_state")
    return builtin_sis(args.T, args.mu0_I, 0.25 if g is None else g, args.constraint)


def _labels(args, env: EnvironmentModel):
    if not args.env:
        return list(SIS_STATES), list(SIS_ACTIONS)
    return [str(i) for i in range(env.dims.n_states)], [str(j) for j in range(env.dims.n_actions)]


def _solve_config(args, tighten: Optional[float] = None) -> SolveConfig:
    return SolveConfig(
        coeffs=CmfomoCoeffs(),
        learning_rate=args.lr,
        max_iters=args.iters,
        tolerance=args.tol,
        tighten_eps0=args.tighten_eps0 if tighten is None else tighten,
        seed=args.seed,
        gradient_mode=args.gradient_mode,
        trace_every=args.trace_every,
        lambda_init=args.lambda_init,
    )


def _load_policy(path: str, env: EnvironmentModel) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"policy file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or "policy" not in doc:
        raise ValidationError(f"{path}: missing 'policy' field")
    try:
        pi = np.asarray(doc["policy"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: 'policy' is not a numeric array") from exc
    check_policy(pi, env.dims)
    return pi


# ---------------------------------------------------------------------------
# solve


def _run_solve(env: EnvironmentModel, cfg: SolveConfig) -> SolveResult:
    if env.population_level:
        return solve_population(env, cfg)
    return solve(env, cfg)


def _write_solve_outputs(out_dir: Path, env, res: SolveResult, labels, svg: bool) -> tuple[list[str], dict]:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    res.write_trace_csv(out_dir / "trace.csv")
    files.append("trace.csv")
    rep = gaps(env, res.policy)
    doc = res.to_json()
    doc["gaps"] = rep.to_json()
    L = flow_from_policy(res.policy, env)
    doc["induced_flow"] = L.tolist()
    _write_json(out_dir / "result.json", doc)
    files.append("result.json")
    states, actions = labels
    T1 = env.dims.horizon_len
    header = ["t"] + [f"state_{s}" for s in states] + [f"action_{a}" for a in actions]
    rows = [[t, *L[t].sum(axis=1), *L[t].sum(axis=0)] for t in range(T1)]
    _write_csv(out_dir / "flow.csv", header, rows)
    files.append("flow.csv")
    if svg:
        cols = res.trace_columns()
        (out_dir / "trace.svg").write_text(
            line_chart(
                cols["iter"],
                {"objective": cols["objective"], "G_opt": cols["g_opt"], "G_fea": cols["g_fea"]},
                "CMFOMO optimization trace",
                "iteration",
                "value (log scale)",
                log_y=True,
            )
        )
        series = {f"state {s}": L[:, i, :].sum(axis=1) for i, s in enumerate(states)}
        series.update({f"action {a}": L[:, :, j].sum(axis=0) for j, a in enumerate(actions)})
        (out_dir / "flow.svg").write_text(line_chart(np.arange(T1), series, "Induced population flow", "t", "mass"))
        files += ["trace.svg", "flow.svg"]
    summary = {
        "objective": res.objective,
        "converged": res.converged,
        "g_opt": rep.g_opt,
        "g_fea": rep.g_fea,
        "avg_cost": float(rep.cost_vector[0]) if rep.cost_vector.size else float("nan"),
        "flow": L,
    }
    return files, summary


def cmd_solve(args) -> int:
    started = time.time()
    env = _env_from_args(args)
    cfg = _solve_config(args)
    out_dir = Path(args.out_dir)
    res = _run_solve(env, cfg)
    files, summary = _write_solve_outputs(out_dir, env, res, _labels(args, env), args.svg)
    _write_manifest(out_dir, "solve", {"args": _args_echo(args), "solve": cfg.to_json()}, args.seed, started, files)
    print(
        json.dumps(
            {k: summary[k] for k in ("objective", "converged", "g_opt", "g_fea", "avg_cost")},
            sort_keys=True,
        )
    )
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _args_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


# ---------------------------------------------------------------------------
# sweep


def _sweep_member(payload: dict) -> dict:
    """Worker: one solve of a sweep. Returns a row dict; never raises."""
    args = argparse.Namespace(**payload["args"])
    param, value = payload["param"], payload["value"]
    try:
        if param == "gamma0":
            env = _env_from_args(args, gamma0=value)
            cfg = _solve_config(args)
        else:
            env = _env_from_args(args)
            cfg = _solve_config(args, tighten=value)
        res = _run_solve(env, cfg)
        sub = Path(payload["subdir"])
        files, summary = _write_solve_outputs(sub, env, res, _labels(args, env), args.svg)
        return {"value": value, "status": "ok", "files": files, **summary}
    except Exception as exc:  # recorded in the sweep table, sweep continues
        return {"value": value, "status": f"error: {type(exc).__name__}: {exc}", "files": []}


def cmd_sweep(args) -> int:
    started = time.time()
    if (args.gamma0_list is None) == (args.eps0_list is None):
        raise ValidationError("give exactly one of --gamma0-list and --eps0-list")
    param = "gamma0" if args.gamma0_list is not None else "eps0"
    values = args.gamma0_list if param == "gamma0" else args.eps0_list
    env = _env_from_args(args)  # validate inputs before any output is written
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = _args_echo(args)
    payloads = [
        {"args": echo, "param": param, "value": v, "subdir": str(out_dir / f"{param}_{v:g}")} for v in values
    ]
    jobs = max(1, args.jobs or os.cpu_count() or 1)
    if jobs == 1 or len(payloads) == 1:
        rows = [_sweep_member(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(payloads))) as pool:
            rows = list(pool.map(_sweep_member, payloads))

    files = []
    table = []
    traj = []
    states, actions = _labels(args, env)
    for p, row in zip(payloads, rows):
        sub = Path(p["subdir"]).name
        files += [f"{sub}/{f}" for f in row["files"]]
        if row["status"] == "ok":
            table.append([row["value"], row["g_opt"], row["g_fea"], row["avg_cost"], row["objective"], row["converged"], "ok"])
            L = row["flow"]
            for t in range(L.shape[0]):
                traj.append([row["value"], t, *L[t].sum(axis=1), *L[t].sum(axis=0)])
        else:
            table.append([row["value"], float("nan"), float("nan"), float("nan"), float("nan"), False, row["status"]])
    _write_csv(out_dir / "sweep.csv", [param, "g_opt", "g_fea", "avg_cost", "objective", "converged", "status"], table)
    header = [param, "t"] + [f"state_{s}" for s in states] + [f"action_{a}" for a in actions]
    _write_csv(out_dir / "trajectories.csv", header, traj)
    files += ["sweep.csv", "trajectories.csv"]
    if args.svg:
        T1 = env.dims.horizon_len
        series = {}
        for row in rows:
            if row["status"] == "ok":
                series[f"{param}={row['value']:g}"] = row["flow"][:, -1, :].sum(axis=1)
        (out_dir / "trajectories.svg").write_text(
            line_chart(np.arange(T1), series, f"Mass of state {states[-1]} by {param}", "t", "mass")
        )
        files.append("trajectories.svg")
    _write_manifest(out_dir, "sweep", {"args": echo, "param": param, "values": values}, args.seed, started, files)
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        log.error("sweep member %s=%g failed: %s", param, r["value"], r["status"])
    print(json.dumps({"param": param, "n": len(rows), "failed": len(failed)}))
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# nplayer / bounds / certify


def _delta_for(env: EnvironmentModel, pi: np.ndarray, override: Optional[float]) -> float:
    if override is not None:
        return override
    if env.dims.n_constraints == 0:
        return 1.0
    rep = lpmod.check_strict_feasibility(env, flow_from_policy(pi, env))
    if rep.max_delta <= 0:
        raise ValidationError("strict feasibility fails at the policy's flow; pass --delta explicitly")
    return rep.max_delta


def cmd_nplayer(args) -> int:
    started = time.time()
    env = _env_from_args(args)
    pi = _load_policy(args.policy, env)
    Ns = sorted(set(args.Ns))
    cfg = NPlayerConfig(n_players=Ns[0], n_episodes=args.episodes, seed=args.seed)
    study: RateStudy = rate_study(env, pi, Ns, cfg)
    delta = _delta_for(env, pi, args.delta)
    target = args.target_eps if args.target_eps is not None else delta
    cert = epsilon_ne_certificate(env, pi, target, delta, config=cfg if args.measure else None, n_players=args.measure_n)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [[getattr(r, c) for c in RateStudy.CSV_COLUMNS] for r in study.rows]
    _write_csv(out_dir / "nplayer.csv", list(RateStudy.CSV_COLUMNS), rows)
    doc = cert.to_json()
    doc["rate_slope"] = study.slope
    warnings = []
    below = [n for n in Ns if n < cert.n_required]
    if below:
        warnings.append(f"N values {below} are below the certified minimum N = {cert.n_required}")
    doc["warnings"] = warnings
    _write_json(out_dir / "certificate.json", doc)
    files = ["nplayer.csv", "certificate.json"]
    _write_manifest(out_dir, "nplayer", {"args": _args_echo(args)}, args.seed, started, files)
    for w in warnings:
        log.warning(w)
    print(json.dumps({"slope": study.slope, "n_required": cert.n_required, "warnings": warnings}))
    return EXIT_OK


def cmd_bounds(args) -> int:
    env = _env_from_args(args)
    if args.delta is not None:
        delta = args.delta
    elif env.dims.n_constraints:
        delta = _delta_for(env, uniform_policy(env.dims), None)
    else:
        delta = 1.0
    bs = bound_constants(env, CmfomoCoeffs(), delta=delta, eps0=args.eps0)
    print(json.dumps(bs.to_json(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_certify(args) -> int:
    env = _env_from_args(args)
    pi = _load_policy(args.policy, env)
    cert = certify_from_policy(env, pi, delta=args.delta)
    doc = {
        "objective_actual": cert.objective_actual,
        "objective_bound": cert.objective_bound,
        "eps1": cert.eps1,
        "eps2": cert.eps2,
        "delta": cert.delta,
        "terms": cert.terms.tolist(),
        "result": "pass" if cert.holds else "fail",
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK if cert.holds else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------------------
# Argument parsing


def _add_env_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("environment")
    g.add_argument(
        "--builtin",
        choices=["sis", "two_step"],
        default="sis",
        help="built-in game: sis (horizon --T) or two_step (all infected at t=0, constraint on P(s_1=I))",
    )
    g.add_argument("--env", help="JSON file with an affine environment; overrides --builtin")
    g.add_argument("--T", type=int, default=10, help="SIS horizon T (time steps 0..T)")
    g.add_argument("--mu0-I", dest="mu0_I", type=float, default=0.5, help="SIS initial infected fraction")
    g.add_argument("--gamma0", type=float, default=None, help="constraint threshold (default 0.25 for sis, 0.8 for two_step)")
    g.add_argument("--constraint", choices=CONSTRAINT_KINDS, default="agent_state")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", default="cmfg_out")


def _add_solver_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--tighten-eps0", type=float, default=0.0, help="solve with gamma0 - eps0")
    g.add_argument("--lr", type=float, default=5e-3)
    g.add_argument("--iters", type=int, default=20000)
    g.add_argument("--tol", type=float, default=1e-8)
    g.add_argument("--gradient-mode", choices=["analytic", "reduced", "finite_diff"], default="analytic")
    g.add_argument("--lambda-init", type=float, default=0.0)
    g.add_argument("--trace-every", type=int, default=100, help="iterations between gap evaluations")
    g.add_argument("--svg", action="store_true", help="also write SVG line charts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmfg", description="Constrained mean-field game solver")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one game with CMFOMO")
    _add_env_args(p)
    _add_solver_args(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="solve over a list of thresholds or tightenings")
    _add_env_args(p)
    _add_solver_args(p)
    lst = p.add_mutually_exclusive_group(required=True)
    lst.add_argument("--gamma0-list", type=_float_list)
    lst.add_argument("--eps0-list", type=_float_list)
    p.add_argument("--jobs", type=int, default=None, help="parallel workers (default: CPU count)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("nplayer", help="N-player simulation and approximate-equilibrium certificate")
    _add_env_args(p)
    p.add_argument("--policy", required=True, help="result.json from a previous solve")
    p.add_argument("--Ns", type=_int_list, default=[10, 50, 100, 500])
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--target-eps", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--measure", action="store_true", help="measure deviation gains at the certified N")
    p.add_argument("--measure-n", type=int, default=None, help="N used for --measure (default: certified minimum)")
    p.set_defaults(func=cmd_nplayer)

    p = sub.add_parser("bounds", help="print the theoretical bound constants")
    _add_env_args(p)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--eps0", type=float, default=0.0)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("certify", help="check the CMFOMO objective bound for a given policy")
    _add_env_args(p)
    p.add_argument("--policy", required=True)
    p.add_argument("--delta", type=float, default=None)
    p.set_defaults(func=cmd_certify)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
