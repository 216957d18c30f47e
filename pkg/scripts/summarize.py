"""Tabulate final regret / log K next to the overlay constants.

Reads the ``summary.csv`` and ``bounds.csv`` written by ``compare`` under
each results directory.

    python3 scripts/summarize.py results/*
"""
import argparse
import csv
import sys
from pathlib import Path


def read_rows(path: Path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


def summarize(directory: Path) -> None:
    summary = directory / "summary.csv"
    if not summary.exists():
        print(f"{directory}: no summary.csv, skipped", file=sys.stderr)
        return
    bounds = {}
    if (directory / "bounds.csv").exists():
        bounds = {r["name"]: r["value"] for r in read_rows(directory / "bounds.csv")}
    print(f"{directory}")
    consts = [f"{k}={float(v):.4g}" for k, v in bounds.items() if k != "orientation"]
    if consts:
        print("  constants: " + ", ".join(consts))
    rows = read_rows(summary)
    width = max(len(r["label"]) for r in rows)
    for r in rows:
        print(f"  {r['label']:<{width}}  regret {float(r['mean_regret']):10.2f} "
              f"± {float(r['ci95']):7.2f}   regret/log K {float(r['regret_over_logk']):8.3f}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("dirs", nargs="+", type=Path)
    for d in ap.parse_args(argv).dirs:
        summarize(d)
    return 0


if __name__ == "__main__":
    sys.exit(main())
