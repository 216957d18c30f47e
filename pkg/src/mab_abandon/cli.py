"""Command-line front end.

    mab-abandon solve    --config cfg.yaml
    mab-abandon bounds   --preset simple
    mab-abandon simulate --config cfg.yaml --runs 1000 --workers 4 --out results/
    mab-abandon compare  --preset simple --out results/simple
    mab-abandon validate --preset simple --runs 10000

Exit status: 0 on success, 1 when a validation check or a simulation failed,
2 for invalid configurations or assumption violations.
"""
from __future__ import annotations

import argparse
import csv
import json
import re
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Optional

from . import config as cfgmod
from .config import ConfigError, ExperimentConfig
from .model import AssumptionError
from .simulator import (RegretTrace, TruncationWarning, cross_validate_estimators, monte_carlo,
                        solve)
from .solver import (ConvergenceError, bound_constants, check_gap_monotonicity, check_orientation,
                     expected_episode_length, is_non_decreasing, sufficient_condition,
                     verify_optimal_policy)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
VALIDATE_EPISODES = 500


def _load(args) -> ExperimentConfig:
    if (args.config is None) == (args.preset is None):
        raise ConfigError("", "give exactly one of --config or --preset")
    cfg = cfgmod.load(args.config) if args.config else cfgmod.load_preset(args.preset)
    return cfg.with_overrides(seed=args.seed, runs=args.runs, episodes=args.episodes,
                              workers=args.workers, directory=args.out)


def _out_dir(cfg: ExperimentConfig) -> Path:
    path = Path(cfg.output.directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _safe(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9._=+-]", "_", label)


def _fmt_row(values) -> str:
    return "  ".join(f"{v:12.6g}" for v in values)


# ---------------------------------------------------------------- solve

def solution_report(cfg: ExperimentConfig) -> dict:
    inst = cfg.instance
    sol = solve(inst, cfg.sim.grid_size)
    rep: dict = {"model": "binary" if inst.is_binary else "general",
                 "means": list(inst.arms.means), "best_arm": inst.arms.best}
    if inst.is_binary:
        verdict = sufficient_condition(inst.abandonment)
        rep.update({
            "V": {"0": sol.v0, "1": sol.v1},
            "Q": sol.q_star_user_order().tolist(),
            "gap": sol.gap_user_order().tolist(),
            "orientation": check_orientation(inst, sol).value,
            "sufficient_condition": "not applicable" if verdict is None else bool(verdict),
            "expected_episode_length": dict(zip(("0", "1"), expected_episode_length(inst))),
            "always_best_arm_optimal": verify_optimal_policy(inst) if inst.M <= 8 else None,
        })
    else:
        probe = [0.0, 0.25, 0.5, 0.75, 1.0]
        rep.update({
            "grid_size": len(sol.states), "iterations": sol.iterations, "residual": sol.residual,
            "V": {str(s): sol.value_at(s) for s in probe},
            "gap": {str(s): inst.arms.to_user_order(sol.gap_at(s)).tolist() for s in probe},
            "V_non_decreasing": is_non_decreasing(sol.v),
            "gap_non_increasing": check_gap_monotonicity(sol),
        })
    return rep


def _print_solution(rep: dict) -> None:
    print(f"model: {rep['model']}   means: {rep['means']}   best arm: {rep['best_arm']}")
    if rep["model"] == "binary":
        print(f"V*(0) = {rep['V']['0']:.12g}   V*(1) = {rep['V']['1']:.12g}")
        print("Q*(s, a), rows s = 0, 1; columns are arms")
        for row in rep["Q"]:
            print("  " + _fmt_row(row))
        print("gap V*(s) - Q*(s, a)")
        for row in rep["gap"]:
            print("  " + _fmt_row(row))
        print(f"orientation: {rep['orientation']}")
        print(f"sufficient condition for the standard orientation: {rep['sufficient_condition']}")
        el = rep["expected_episode_length"]
        print(f"expected episode length (best arm): from 0 {el['0']:.6g}, from 1 {el['1']:.6g}")
        if rep["always_best_arm_optimal"] is not None:
            print(f"always pulling the best arm is optimal (brute force): {rep['always_best_arm_optimal']}")
    else:
        print(f"grid: {rep['grid_size']} points, {rep['iterations']} iterations, "
              f"residual {rep['residual']:.3g}")
        for s, v in rep["V"].items():
            print(f"V*({s}) = {v:.10g}   gap = {_fmt_row(rep['gap'][s])}")
        print(f"V* non-decreasing: {rep['V_non_decreasing']}")
        print(f"gap non-increasing in s: {rep['gap_non_increasing']}")


def cmd_solve(args) -> int:
    cfg = _load(args)
    rep = solution_report(cfg)
    if args.json:
        print(json.dumps(rep, indent=2))
    else:
        _print_solution(rep)
    if args.out:
        (_out_dir(cfg) / "solution.json").write_text(json.dumps(rep, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- bounds

def overlay_constants(cfg: ExperimentConfig) -> dict[str, float]:
    inst = cfg.instance
    sol = solve(inst, cfg.sim.grid_size)
    bins = cfg.disc_bins if not inst.is_binary else ()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        consts = bound_constants(inst, sol, n_bins=bins)
    return {**consts.as_dict(), "orientation": consts.orientation.value}


def write_overlay(path: Path, consts: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "value"])
        for k, v in consts.items():
            w.writerow([k, repr(v) if isinstance(v, float) else v])


def cmd_bounds(args) -> int:
    cfg = _load(args)
    try:
        consts = overlay_constants(cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    width = max(len(k) for k in consts)
    for k, v in consts.items():
        print(f"{k:<{width}}  {v:.10g}" if isinstance(v, float) else f"{k:<{width}}  {v}")
    if args.out:
        write_overlay(_out_dir(cfg) / "bounds.csv", consts)
    return EXIT_OK


# ---------------------------------------------------------------- simulate / compare

def _progress(label: str, quiet: bool):
    if quiet:
        return None

    def report(done: int, total: int) -> None:
        end = "\n" if done >= total else ""
        print(f"\r{label}: {done}/{total} runs", end=end, file=sys.stderr, flush=True)
    return report


def run_all(cfg: ExperimentConfig, quiet: bool = False) -> dict[str, RegretTrace]:
    out = _out_dir(cfg)
    sol = solve(cfg.instance, cfg.sim.grid_size)
    traces = {}
    for pol in cfg.policies:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", TruncationWarning)
            trace = monte_carlo(cfg.sim_config(pol), workers=cfg.sim.workers, label=pol.label,
                                progress=_progress(pol.label, quiet), solution=sol)
        for w in caught:
            print(f"warning: {pol.label}: {w.message}", file=sys.stderr)
        if "csv" in cfg.output.formats:
            trace.to_csv(out / f"{_safe(pol.label)}.csv")
        traces[pol.label] = trace
    return traces


def _summary_rows(traces: dict[str, RegretTrace]) -> list[dict]:
    rows = []
    for label, tr in traces.items():
        K = int(tr.k[-1])
        rows.append({"label": label, "K": K, "runs": tr.runs, "mean_regret": float(tr.mean[-1]),
                     "ci95": float(tr.ci95[-1]), "std": float(tr.std[-1]),
                     "regret_over_logk": float(tr.regret_over_logk[-1]),
                     "truncated_episodes": tr.truncated})
    return rows


def _print_summary(rows: list[dict]) -> None:
    width = max(len(r["label"]) for r in rows)
    print(f"{'policy':<{width}}  {'K':>6}  {'runs':>6}  {'mean regret':>14}  {'95% CI':>10}  {'regret/log K':>12}")
    for r in rows:
        ratio = r["regret_over_logk"]
        print(f"{r['label']:<{width}}  {r['K']:>6}  {r['runs']:>6}  {r['mean_regret']:>14.6g}  "
              f"{'±' + format(r['ci95'], '.4g'):>10}  {ratio:>12.6g}"
              + (f"  ({r['truncated_episodes']} truncated)" if r["truncated_episodes"] else ""))


def _write_summary(cfg: ExperimentConfig, rows: list[dict], extra: Optional[dict] = None) -> None:
    out = _out_dir(cfg)
    if "csv" in cfg.output.formats:
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    if "json" in cfg.output.formats:
        blob = {"config": cfgmod.to_dict(cfg), "summary": rows, **(extra or {})}
        (out / "summary.json").write_text(json.dumps(blob, indent=2) + "\n")


def cmd_simulate(args) -> int:
    cfg = _load(args)
    rows = _summary_rows(run_all(cfg, args.quiet))
    _print_summary(rows)
    _write_summary(cfg, rows)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args)
    if len(cfg.policies) < 2:
        raise ConfigError("policies", "compare needs at least two policies")
    traces = run_all(cfg, args.quiet)
    rows = _summary_rows(traces)
    _print_summary(rows)
    out = _out_dir(cfg)
    try:
        consts = overlay_constants(cfg)
    except ValueError as exc:
        print(f"warning: no overlay constants: {exc}", file=sys.stderr)
        consts = {}
    if consts:
        write_overlay(out / "bounds.csv", consts)
        print("reference constants (coefficients of log K): "
              + ", ".join(f"{k}={v:.6g}" for k, v in consts.items() if isinstance(v, float)))
    # one plot-ready table of regret / log k, a column per policy
    labels = list(traces)
    k = next(iter(traces.values())).k
    with open(out / "normalized.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k"] + labels)
        ratios = [traces[lb].regret_over_logk for lb in labels]
        for i in range(1, len(k)):
            w.writerow([int(k[i])] + [repr(float(r[i])) for r in ratios])
    _write_summary(cfg, rows, {"bounds": consts})
    return EXIT_OK


# ---------------------------------------------------------------- validate

def cmd_validate(args) -> int:
    cfg = _load(args)
    ok = True
    inst = cfg.instance
    if inst.is_binary and inst.M <= 8:
        opt = verify_optimal_policy(inst)
        print(f"always pulling the best arm is optimal (brute force over stationary policies): {opt}")
        ok &= opt
    episodes = args.episodes or min(cfg.sim.episodes, VALIDATE_EPISODES)
    sol = solve(inst, cfg.sim.grid_size)
    labels = args.policy or [p.label for p in cfg.policies]
    for label in labels:
        try:
            sim = replace(cfg.sim_config(label), K=episodes)
        except KeyError:
            raise ConfigError("policies", f"no policy labelled {label!r}") from None
        rep = cross_validate_estimators(sim, workers=cfg.sim.workers, solution=sol)
        verdict = "agree" if rep.agree else "DISAGREE"
        print(f"{label}: K={episodes} runs={sim.runs}  decomposition {rep.decomposition:.6g} "
              f"± {rep.decomposition_ci:.3g}  direct {rep.direct:.6g} ± {rep.direct_ci:.3g}  {verdict}")
        ok &= rep.agree
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("configuration")
    src.add_argument("--config", type=str, help="experiment YAML file")
    src.add_argument("--preset", type=str, help="bundled preset name (see 'presets')")
    over = common.add_argument_group("overrides")
    over.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    over.add_argument("--runs", type=int, help="independent replications")
    over.add_argument("--episodes", type=int, help="episodes per replication (K)")
    over.add_argument("--workers", type=int, help="worker processes")
    over.add_argument("--out", type=str, help="output directory")
    common.add_argument("--quiet", action="store_true", help="no progress output")

    parser = argparse.ArgumentParser(prog="mab-abandon", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", parents=[common], help="optimal values, gaps and checks")
    p.add_argument("--json", action="store_true", help="print JSON instead of text")
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("bounds", parents=[common], help="asymptotic regret constants")
    p.set_defaults(func=cmd_bounds)
    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo regret traces")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("compare", parents=[common],
                       help="simulate all policies plus normalized traces and overlay constants")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("validate", parents=[common],
                       help="estimator cross-check and brute-force optimality check")
    p.add_argument("--policy", action="append", help="policy label to check (repeatable)")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("presets", help="list bundled presets")
    p.set_defaults(func=lambda args: print("\n".join(cfgmod.preset_names())) or EXIT_OK)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, AssumptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
