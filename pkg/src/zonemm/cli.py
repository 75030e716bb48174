"""Command-line front end: config ingestion, run orchestration, CSV and
plot-script emission, and the verification runner.

Exit codes: 0 ok, 1 validation error, 2 numerical failure, 3 verification
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time as _time
from pathlib import Path

import numpy as np

from . import __version__
from .hjb import (Lattice, NumericalError, PolicyGrid, imbalance_curves,
                  solve_hjb, solve_platform, write_imbalance_csv,
                  write_solution_csv)
from .model import ValidationError, build_bundle, load_config
from .montecarlo import (SimConfig, estimate_utility, simulate_policy,
                         write_summary, write_trades_csv)
from .output import write_csv
from .tick_sweep import run_sweep, write_sweep_csv
from .uncertainty_zone import write_jumps_csv, write_path_csv
from .verify import run_level

__all__ = ["main"]


class _Manifest:
    """Run record written before and finalized after every command."""

    def __init__(self, out_dir: Path, command: str, config_path, config: dict,
                 seed: int, threads: int):
        self.path = out_dir / "manifest.json"
        self.t0 = _time.perf_counter()
        self.doc = {
            "tool": "zonemm",
            "version": __version__,
            "command": command,
            "config_path": str(config_path) if config_path else None,
            "config": config,
            "seed": seed,
            "threads": threads,
            "status": "running",
            "wall_seconds": None,
            "artifacts": {},
        }
        self._write()

    def _write(self) -> None:
        self.path.write_text(json.dumps(self.doc, indent=2, default=str) + "\n",
                             encoding="utf-8")

    def finalize(self, status: str, out_dir: Path) -> None:
        self.doc["status"] = status
        self.doc["wall_seconds"] = round(_time.perf_counter() - self.t0, 3)
        for f in sorted(out_dir.iterdir()):
            if f.is_file() and f.name != "manifest.json":
                digest = hashlib.sha256(f.read_bytes()).hexdigest()
                self.doc["artifacts"][f.name] = digest
        self._write()


def _gnuplot_script(out_dir: Path, name: str, csv: str, xlabel: str, ylabel: str,
                    using: str) -> None:
    script = (f"set datafile separator ','\nset key autotitle columnhead\n"
              f"set xlabel '{xlabel}'\nset ylabel '{ylabel}'\n"
              f"plot '{csv}' using {using} with linespoints\n")
    (out_dir / name).write_text(script, encoding="utf-8")


def _parse_floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip() != ""]


def _lattice(bundle, config: dict) -> Lattice:
    grid = config.get("grid", {})
    try:
        return Lattice.make(bundle.params, n_t=int(grid["n_t"]), n_y=int(grid["n_y"]))
    except KeyError as exc:
        raise ValidationError(f"missing [grid] key {exc.args[0]!r}") from exc


def _solve(bundle, config, snapshot_times, keep_full=False):
    lattice = _lattice(bundle, config)
    return solve_hjb(bundle.params, (bundle.intensity_ask, bundle.intensity_bid),
                     (bundle.measure_ask, bundle.measure_bid), bundle.penalty,
                     lattice, snapshot_times=snapshot_times, keep_full=keep_full)


def cmd_solve(args, config: dict, out: Path) -> int:
    bundle = build_bundle(config)
    times = (_parse_floats(args.snapshot_times) if args.snapshot_times
             else [0.0, bundle.params.horizon / 2.0])
    sol = _solve(bundle, config, times, keep_full=args.keep_full)
    write_solution_csv(sol, out / "value_policy.csv", times)
    _gnuplot_script(out, "value_policy.gp", "value_policy.csv", "y", "quote",
                    "3:5")
    (out / "diagnostics.txt").write_text(
        "".join(f"{k}={v}\n" for k, v in sol.diagnostics.items()), encoding="utf-8")
    return 0


def cmd_imbalance(args, config: dict, out: Path) -> int:
    bundle = build_bundle(config)
    t = args.t if args.t is not None else 0.0
    inventories = (_parse_floats(args.inventories) if args.inventories
                   else [-15.0, -8.0, 0.0, 8.0, 15.0])
    sol = _solve(bundle, config, [t])
    table = imbalance_curves(sol, t, inventories)
    write_imbalance_csv(table, out / "imbalance.csv")
    _gnuplot_script(out, "imbalance.gp", "imbalance.csv", "y", "imbalance", "1:3")
    return 0


def cmd_tick_sweep(args, config: dict, out: Path) -> int:
    bundle = build_bundle(config)
    sweep = config.get("sweep", {})
    if "delta_grid" in sweep:
        grid = [float(d) for d in sweep["delta_grid"]]
    else:
        grid = list(np.geomspace(float(sweep.get("delta_min", 0.001)),
                                 float(sweep.get("delta_max", 0.02)),
                                 int(sweep.get("delta_count", 12))))
    sigmas = [float(s) for s in sweep.get("sigmas", [bundle.params.sigma])]
    eta0 = float(sweep.get("eta0", 0.2))
    delta0 = float(sweep.get("delta0", 0.1))
    n_y = int(config.get("grid", {}).get("n_y", 140))
    n_t = sweep.get("n_t")
    rows = []
    for sigma in sigmas:
        res = run_sweep(grid, bundle, sigma=sigma, eta0=eta0, delta0=delta0,
                        n_y=n_y, n_t=int(n_t) if n_t else None,
                        n_t_cap=int(sweep.get("n_t_cap", 4000)),
                        keep_profiles=args.profiles)
        for r in res.rows:
            rows.append((sigma, r.delta, r.eta, r.mean_W))
        if args.profiles:
            for d, prof in res.profiles.items():
                write_csv(out / f"profile_sigma{sigma}_delta{d:.6f}.csv",
                          ["y_index", "W"], list(enumerate(prof)))
        write_sweep_csv(res, out / f"tick_sweep_sigma{sigma}.csv")
    write_csv(out / "tick_sweep.csv", ["sigma", "delta", "eta", "mean_W"], rows)
    _gnuplot_script(out, "tick_sweep.gp", "tick_sweep.csv", "delta", "mean W", "2:4")
    return 0


def cmd_simulate(args, config: dict, out: Path, seed: int) -> int:
    bundle = build_bundle(config)
    sim = config.get("simulation", {})
    n_paths = args.n_paths or int(sim.get("n_paths", 1000))
    dt = float(sim.get("dt", 0.1))
    start_Q = float(sim.get("start_inventory", 0.0))
    start_y = float(sim.get("start_y", 0.0))
    policy_arg = args.policy or "solve"
    if policy_arg == "zero":
        policy = "zero"
    elif policy_arg.startswith("constant:"):
        qa, qb = (float(x) for x in policy_arg.split(":", 1)[1].split(","))
        policy = ("constant", qa, qb)
    elif policy_arg == "solve":
        policy = _solve(bundle, config, [0.0], keep_full=True).policy
    else:
        raise ValidationError(f"unknown policy source {policy_arg!r}")

    cfg = SimConfig(n_paths=n_paths, dt=dt, seed=seed, start_inventory=start_Q,
                    start_y=start_y, policy=policy)
    est, diag = estimate_utility(cfg, bundle.params,
                                 (bundle.intensity_ask, bundle.intensity_bid),
                                 (bundle.measure_ask, bundle.measure_bid),
                                 bundle.penalty)
    extra = dict(diag)
    if policy == "zero":
        p = bundle.params
        exact = -math.exp(p.gamma * float(bundle.penalty.eval_grid(
            np.asarray([start_Q]))[0])
            + p.gamma**2 * p.sigma**2 * start_Q**2 * p.horizon / 2.0)
        extra["closed_form_mean"] = exact
        extra["closed_form_z"] = ((est.mean - exact) / est.std_error
                                  if est.std_error > 0 else 0.0)
    write_summary(est, out / "summary.txt", extra)
    one = simulate_policy(SimConfig(n_paths=1, dt=dt, seed=seed,
                                    start_inventory=start_Q, start_y=start_y,
                                    policy=policy),
                          bundle.params, (bundle.intensity_ask, bundle.intensity_bid),
                          (bundle.measure_ask, bundle.measure_bid), bundle.penalty,
                          p0=bundle.params.delta / 2.0)
    write_trades_csv(one.trades, out / "trades.csv")
    write_csv(out / "path.csv", ["time", "S", "Y", "P", "inventory", "pnl"],
              zip(one.times, one.efficient, one.signed_distance, one.mid,
                  one.inventory, one.pnl))
    return 0


def cmd_verify(args, config: dict, out: Path) -> int:
    results = run_level(args.level, paper_scale=args.paper_scale)
    lines = [r.line() for r in results]
    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    (out / "verify_report.txt").write_text(report, encoding="utf-8")
    (out / "verify_report.json").write_text(json.dumps(
        [r.__dict__ for r in results], indent=2) + "\n", encoding="utf-8")
    return 0 if all(r.passed for r in results) else 3


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--out", type=Path, default=Path("zonemm-out"),
                        help="output directory (created if missing)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1,
                        help="worker hint recorded in the manifest")

    parser = argparse.ArgumentParser(
        prog="zonemm",
        description="Optimal market making under uncertainty-zone price dynamics")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve the quoting problem")
    s.add_argument("--snapshot-times", help="comma-separated times to export")
    s.add_argument("--keep-full", action="store_true")

    s = sub.add_parser("imbalance", parents=[common],
                       help="imbalance-versus-distance curves")
    s.add_argument("--t", type=float)
    s.add_argument("--inventories", help="comma-separated inventory levels")

    s = sub.add_parser("tick-sweep", parents=[common],
                       help="platform tick-size study")
    s.add_argument("--profiles", action="store_true",
                   help="emit per-tick W(0,0,.) profiles")

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo runs")
    s.add_argument("--policy", help="solve | zero | constant:QA,QB")
    s.add_argument("--n-paths", type=int)

    s = sub.add_parser("verify", parents=[common], help="run the check suite")
    s.add_argument("--level", choices=["quick", "full"], default="quick")
    s.add_argument("--paper-scale", action="store_true",
                   help="include the hours-class tick reproduction")
    return parser


_NEEDS_CONFIG = {"solve", "imbalance", "tick-sweep", "simulate"}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    config = {}
    manifest = None
    try:
        if args.config is not None:
            if not args.config.exists():
                raise ValidationError(f"config file not found: {args.config}")
            config = load_config(args.config)
        elif args.command in _NEEDS_CONFIG:
            raise ValidationError("--config is required for this command")
        manifest = _Manifest(out, args.command, args.config, config,
                             args.seed, args.threads)
        if args.command == "solve":
            code = cmd_solve(args, config, out)
        elif args.command == "imbalance":
            code = cmd_imbalance(args, config, out)
        elif args.command == "tick-sweep":
            code = cmd_tick_sweep(args, config, out)
        elif args.command == "simulate":
            code = cmd_simulate(args, config, out, args.seed)
        else:
            code = cmd_verify(args, config, out)
        manifest.finalize("completed" if code == 0 else "failed", out)
        return code
    except ValidationError as exc:
        sys.stderr.write(f"validation error: {exc}\n")
        if manifest:
            manifest.finalize("failed", out)
        return 1
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        if manifest:
            manifest.finalize("failed", out)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
