"""Steps per second of the compiled trial loop, per policy.

Useful for sizing ``--runs`` before a long job.

    python3 scripts/throughput.py --preset simple --episodes 20000 --trials 5
"""
import argparse
import time

from mab_abandon.config import load_preset
from mab_abandon.simulator import run_trial, solve


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--preset", default="simple")
    ap.add_argument("--episodes", type=int, default=20_000)
    ap.add_argument("--trials", type=int, default=5)
    args = ap.parse_args(argv)
    cfg = load_preset(args.preset).with_overrides(episodes=args.episodes)
    sol = solve(cfg.instance, cfg.sim.grid_size)
    for pol in cfg.policies:
        sc = cfg.sim_config(pol)
        run_trial(sc, 0, sol)  # compile
        t0 = time.perf_counter()
        steps = sum(run_trial(sc, i, sol).steps for i in range(args.trials))
        dt = (time.perf_counter() - t0) / args.trials
        print(f"{pol.label:<16} {dt:7.3f} s/run  {steps / args.trials / dt / 1e6:6.1f} Msteps/s")


if __name__ == "__main__":
    main()
