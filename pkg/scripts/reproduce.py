"""Run ``compare`` for every bundled preset (or a chosen subset).

Each preset writes per-policy traces, normalized.csv, bounds.csv and a
summary into ``<out>/<preset>/``. Scale defaults to the preset values;
``--runs`` / ``--episodes`` shrink it for a quick pass.

    python3 scripts/reproduce.py --runs 200 --episodes 5000 --workers 4
    python3 scripts/reproduce.py simple soft_abandonment
"""
import argparse
import sys
import time
from pathlib import Path

from mab_abandon.cli import main as cli_main
from mab_abandon.config import preset_names


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("presets", nargs="*", help="presets to run (default: all)")
    ap.add_argument("--out", default="results", help="root output directory")
    ap.add_argument("--runs", type=int)
    ap.add_argument("--episodes", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--quiet", action="store_true")
    return ap.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    names = args.presets or preset_names()
    unknown = sorted(set(names) - set(preset_names()))
    if unknown:
        print(f"unknown presets: {', '.join(unknown)}", file=sys.stderr)
        return 2
    status = 0
    for name in names:
        cmd = ["compare", "--preset", name, "--out", str(Path(args.out) / name)]
        for flag in ("runs", "episodes", "workers", "seed"):
            value = getattr(args, flag)
            if value is not None:
                cmd += [f"--{flag}", str(value)]
        if args.quiet:
            cmd.append("--quiet")
        print(f"== {name}", flush=True)
        t0 = time.perf_counter()
        rc = cli_main(cmd)
        print(f"== {name}: exit {rc}, {time.perf_counter() - t0:.0f}s\n", flush=True)
        status = max(status, rc)
    return status


if __name__ == "__main__":
    sys.exit(main())
