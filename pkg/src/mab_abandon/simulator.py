"""Monte-Carlo regret harness.

A trial plays K episodes with one learner and records cumulative regret after
every episode. Two estimators are available:

* ``DECOMPOSITION`` charges ``V*(S_t) - Q*(S_t, A_t)`` at every step of the
  learner's own trajectory (zero whenever the best arm is pulled). Unbiased
  for the expected regret and far less noisy.
* ``DIRECT`` subtracts the learner's episode reward from the reward of an
  independently simulated always-best-arm episode with the same initial state.

Replication ``i`` always draws from the stream ``(master_seed, i)`` and
replications are reduced in fixed blocks of ``BLOCK`` in index order, so
results do not depend on the number of worker processes.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels as kern
from .model import BanditInstance, LogCurve, TableCurve, replication_rng, step
from .policies import (AgentState, Kind, Orientation, PolicySpec, QTable, qlearn_step,
                       select_action, update)
from .solver import ValueSolution, expected_episode_length, solve_binary_values, solve_general_values

BLOCK = 64
DEFAULT_SEED = 20240607
Z95 = 1.959963984540054

_KIND_CODES = {
    Kind.ULCB: kern.ULCB, Kind.KL_ULCB: kern.KL_ULCB, Kind.UCB: kern.UCB, Kind.KL_UCB: kern.KL_UCB,
    Kind.DISC_ULCB: kern.DISC_ULCB, Kind.DISC_KL_ULCB: kern.DISC_KL_ULCB,
    Kind.CONT_ULCB: kern.CONT_ULCB, Kind.CONT_KL_ULCB: kern.CONT_KL_ULCB,
    Kind.Q_EPS: kern.Q_EPS, Kind.Q_UCB: kern.Q_UCB, Kind.FIXED: kern.FIXED,
}


class Estimator(enum.Enum):
    DECOMPOSITION = "decomposition"
    DIRECT = "direct"


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SimConfig:
    instance: BanditInstance
    policy: PolicySpec
    K: int = 20_000
    runs: int = 10_000
    master_seed: int = DEFAULT_SEED
    episode_cap: int = 10**6
    estimator: Estimator = Estimator.DECOMPOSITION
    grid_size: int = 1024

    def __post_init__(self):
        if self.K < 1 or self.runs < 1 or self.episode_cap < 1:
            raise ValueError("K, runs and episode_cap must all be >= 1")
        if self.policy.kind.q_learning and not self.instance.is_binary:
            raise ValueError("Q-learning baselines are defined on the binary state model only")
        if self.policy.kind is Kind.FIXED and not 0 <= self.policy.fixed_arm < self.instance.M:
            raise ValueError("fixed_arm out of range")


def describe(config: SimConfig) -> dict:
    """Canonical, JSON-friendly description used for hashing and headers."""
    inst = config.instance
    ab = inst.abandonment
    if inst.is_binary:
        ab_d = {"type": "binary", "q00": ab.q00, "q01": ab.q01, "q10": ab.q10, "q11": ab.q11}
    elif isinstance(ab.curve, LogCurve):
        ab_d = {"type": "general", "curve": "log", "c6": ab.curve.c6, "theta": ab.theta}
    else:
        ab_d = {"type": "general", "curve": "table", "points": [list(p) for p in ab.curve.points],
                "theta": ab.theta}
    p = config.policy
    pol = {"kind": p.kind.value, "c0": p.c0, "c1": p.c1, "c": p.c, "orientation": p.orientation.value,
           "n_bins": p.n_bins, "epsilon": p.epsilon, "H": p.H, "bonus_c": p.bonus_c,
           "q_init": p.q_init, "fixed_arm": p.fixed_arm}
    return {"instance": {"means": list(inst.arms.means), "abandonment": ab_d,
                         "initial_state": inst.initial_state},
            "policy": pol, "K": config.K, "runs": config.runs, "seed": config.master_seed,
            "episode_cap": config.episode_cap, "estimator": config.estimator.value,
            "grid_size": config.grid_size}


def config_hash(config: SimConfig) -> str:
    blob = json.dumps(describe(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def solve(instance: BanditInstance, grid_size: int = 1024) -> ValueSolution:
    if instance.is_binary:
        return solve_binary_values(instance)
    return solve_general_values(instance, grid_size=grid_size)


def resolve_policy(config: SimConfig) -> PolicySpec:
    """Fill instance-dependent defaults (Q-UCB's H)."""
    p = config.policy
    if p.kind is Kind.Q_UCB and p.H is None:
        return p.with_H(max(expected_episode_length(config.instance)))
    return p


@dataclass
class _Prepared:
    args: tuple
    K: int
    cap: int
    direct: bool


def _prepare(config: SimConfig, solution: Optional[ValueSolution] = None) -> _Prepared:
    inst = config.instance
    policy = resolve_policy(config)
    direct = config.estimator is Estimator.DIRECT
    M = inst.M
    if solution is None and not direct:
        solution = solve(inst, config.grid_size)
    fp = np.array([policy.c0, policy.c1, policy.c, policy.epsilon,
                   policy.H if policy.H is not None else 0.0, policy.bonus_c, policy.q_init])
    ip = np.array([_KIND_CODES[policy.kind], int(policy.orientation is Orientation.OPPOSITE),
                   policy.n_bins, policy.fixed_arm], dtype=np.int64)
    means = np.array(inst.arms.means, dtype=float)
    empty = np.zeros(2)
    if inst.is_binary:
        qtab = inst.abandonment.table
        theta, curve_kind, c6, cx, cy = 0.0, kern.CURVE_LOG, 1.0, empty, empty
        gap_tab = solution.gap_user_order() if solution is not None else np.zeros((2, M))
        vgrid = empty
    else:
        ab = inst.abandonment
        qtab = np.zeros((2, 2))
        theta = ab.theta
        if isinstance(ab.curve, LogCurve):
            curve_kind, c6, cx, cy = kern.CURVE_LOG, ab.curve.c6, empty, empty
        elif isinstance(ab.curve, TableCurve):
            curve_kind, c6, cx, cy = kern.CURVE_TABLE, 0.0, ab.curve.xs, ab.curve.ys
        else:
            raise TypeError(f"unsupported abandonment curve {type(ab.curve).__name__}")
        gap_tab = np.zeros((2, M))
        vgrid = solution.v if solution is not None else np.zeros(2)
    args = (fp, ip, means, inst.is_binary, qtab, theta, curve_kind, c6, cx, cy,
            float(inst.initial_state), gap_tab, vgrid, inst.arms.best)
    return _Prepared(args, config.K, config.episode_cap, direct)


@dataclass
class TrialResult:
    regret: np.ndarray
    truncated: int
    steps: int


def _run_prepared(prep: _Prepared, rng: np.random.Generator) -> TrialResult:
    out = np.empty(prep.K)
    truncated, steps = kern.run_trial(rng, *prep.args, prep.K, prep.cap, prep.direct, out)
    return TrialResult(out, int(truncated), int(steps))


def run_trial(config: SimConfig, replication_index: int,
              solution: Optional[ValueSolution] = None) -> TrialResult:
    """One replication with the compiled loop."""
    prep = _prepare(config, solution)
    return _run_prepared(prep, replication_rng(config.master_seed, replication_index))


def run_trial_reference(config: SimConfig, replication_index: int,
                        solution: Optional[ValueSolution] = None) -> TrialResult:
    """Same trial as :func:`run_trial`, written step by step in Python.

    Much slower; exists to check the compiled loop.
    """
    inst = config.instance
    policy = resolve_policy(config)
    direct = config.estimator is Estimator.DIRECT
    if solution is None and not direct:
        solution = solve(inst, config.grid_size)
    rng = replication_rng(config.master_seed, replication_index)
    agent = AgentState.fresh(inst.M)
    qtable = QTable.fresh(inst.M, policy.q_init) if policy.kind.q_learning else None
    best = inst.arms.best
    gap_user = solution.gap_user_order() if (solution is not None and inst.is_binary) else None

    def gap(s, a):
        if a == best:
            return 0.0
        if inst.is_binary:
            return gap_user[s, a]
        return inst.arms.to_user_order(solution.gap_at(s))[a]

    regret = np.empty(config.K)
    cum = 0.0
    truncated = steps = 0
    for k in range(config.K):
        s = inst.sample_initial_state(rng)
        s_first, ep_reward, h = s, 0, 0
        while True:
            if h >= config.episode_cap:
                truncated += 1
                break
            a = select_action(policy, s, agent, qtable, rng)
            if not direct:
                cum += gap(s, a)
            outcome = step(s, a, inst, rng)
            update(agent, a, outcome.reward)
            if qtable is not None:
                qlearn_step(qtable, s, a, outcome.reward, outcome.next_state, policy)
            ep_reward += outcome.reward
            h += 1
            steps += 1
            if outcome.terminal:
                break
            s = outcome.next_state
        if direct:
            s, genie, g = s_first, 0, 0
            while g < config.episode_cap:
                outcome = step(s, best, inst, rng)
                genie += outcome.reward
                g += 1
                if outcome.terminal:
                    break
                s = outcome.next_state
            if g >= config.episode_cap:
                truncated += 1
            cum += genie - ep_reward
        regret[k] = cum
    return TrialResult(regret, truncated, steps)


@dataclass
class _Block:
    n: int
    mean: np.ndarray
    m2: np.ndarray
    truncated: int
    steps: int


def _run_block(config: SimConfig, start: int, stop: int, solution: Optional[ValueSolution]) -> _Block:
    prep = _prepare(config, solution)
    mean = np.zeros(config.K)
    m2 = np.zeros(config.K)
    truncated = steps = 0
    n = 0
    for i in range(start, stop):
        res = _run_prepared(prep, replication_rng(config.master_seed, i))
        n += 1
        delta = res.regret - mean
        mean += delta / n
        m2 += delta * (res.regret - mean)
        truncated += res.truncated
        steps += res.steps
    return _Block(n, mean, m2, truncated, steps)


def _merge(a: _Block, b: _Block) -> _Block:
    n = a.n + b.n
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.n / n)
    m2 = a.m2 + b.m2 + delta * delta * (a.n * b.n / n)
    return _Block(n, mean, m2, a.truncated + b.truncated, a.steps + b.steps)


def _run_block_args(args):
    return _run_block(*args)


@dataclass
class RegretTrace:
    """Mean cumulative regret per episode index with 95% normal CIs."""

    k: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    ci95: np.ndarray
    runs: int
    seed: int
    config_hash: str = ""
    label: str = ""
    truncated: int = 0
    total_steps: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def regret_over_logk(self) -> np.ndarray:
        """``mean / log k``; NaN at k = 1 where log k = 0."""
        out = np.full(len(self.k), np.nan)
        sel = self.k >= 2
        out[sel] = self.mean[sel] / np.log(self.k[sel])
        return out

    @property
    def final(self) -> tuple[float, float]:
        return float(self.mean[-1]), float(self.ci95[-1])

    def to_csv(self, path) -> None:
        lines = [f"# label: {self.label}", f"# config_hash: {self.config_hash}",
                 f"# seed: {self.seed}", f"# runs: {self.runs}",
                 f"# truncated_episodes: {self.truncated}", f"# total_steps: {self.total_steps}",
                 "k,mean_regret,std,ci95,regret_over_logk"]
        ratio = self.regret_over_logk
        for i in range(len(self.k)):
            lines.append(",".join([str(int(self.k[i])), _fmt(self.mean[i]), _fmt(self.std[i]),
                                   _fmt(self.ci95[i]), _fmt(ratio[i])]))
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "RegretTrace":
        header: dict[str, str] = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("#"):
                    key, _, value = line[1:].partition(":")
                    header[key.strip()] = value.strip()
                elif line and not line.startswith("k,"):
                    rows.append([float(x) for x in line.split(",")])
        arr = np.array(rows, dtype=float).reshape(-1, 5)
        return cls(k=arr[:, 0].astype(np.int64), mean=arr[:, 1], std=arr[:, 2], ci95=arr[:, 3],
                   runs=int(header.get("runs", 0)), seed=int(header.get("seed", 0)),
                   config_hash=header.get("config_hash", ""), label=header.get("label", ""),
                   truncated=int(header.get("truncated_episodes", 0)),
                   total_steps=int(header.get("total_steps", 0)))


def _fmt(x: float) -> str:
    return "nan" if not math.isfinite(x) else repr(float(x))


def monte_carlo(config: SimConfig, workers: int = 1, label: str = "",
                progress: Optional[Callable[[int, int], None]] = None,
                solution: Optional[ValueSolution] = None) -> RegretTrace:
    """Run ``config.runs`` replications and aggregate them in index order."""
    if solution is None and config.estimator is Estimator.DECOMPOSITION:
        solution = solve(config.instance, config.grid_size)
    bounds = [(i, min(i + BLOCK, config.runs)) for i in range(0, config.runs, BLOCK)]
    tasks = [(config, lo, hi, solution) for lo, hi in bounds]
    total: Optional[_Block] = None

    def consume(blocks):
        nonlocal total
        for j, blk in enumerate(blocks):
            total = blk if total is None else _merge(total, blk)
            if progress is not None:
                progress(bounds[j][1], config.runs)

    if workers <= 1 or len(tasks) == 1:
        consume(map(_run_block_args, tasks))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            consume(pool.map(_run_block_args, tasks))
    n = total.n
    if n >= 2:
        std = np.sqrt(np.maximum(total.m2, 0.0) / (n - 1))
        ci = Z95 * std / math.sqrt(n)
    else:
        std = np.full(config.K, np.nan)
        ci = np.full(config.K, np.nan)
    if total.truncated:
        warnings.warn(f"{total.truncated} episodes hit the cap of {config.episode_cap} steps",
                      TruncationWarning, stacklevel=2)
    return RegretTrace(k=np.arange(1, config.K + 1), mean=total.mean, std=std, ci95=ci, runs=n,
                       seed=config.master_seed, config_hash=config_hash(config), label=label,
                       truncated=total.truncated, total_steps=total.steps)


def normalize_by_logk(trace: RegretTrace) -> tuple[np.ndarray, np.ndarray]:
    """``(k, mean/log k)`` for k >= 2."""
    sel = trace.k >= 2
    return trace.k[sel], trace.mean[sel] / np.log(trace.k[sel])


@dataclass(frozen=True)
class EstimatorReport:
    decomposition: float
    decomposition_ci: float
    direct: float
    direct_ci: float

    @property
    def difference(self) -> float:
        return self.decomposition - self.direct

    @property
    def agree(self) -> bool:
        return abs(self.difference) <= self.decomposition_ci + self.direct_ci


def cross_validate_estimators(config: SimConfig, workers: int = 1,
                              solution: Optional[ValueSolution] = None) -> EstimatorReport:
    """Run both estimators on independent seeds and compare regret at k = K."""
    from dataclasses import replace

    dec = monte_carlo(replace(config, estimator=Estimator.DECOMPOSITION), workers, solution=solution)
    dirc = monte_carlo(replace(config, estimator=Estimator.DIRECT,
                               master_seed=config.master_seed + 1), workers)
    return EstimatorReport(float(dec.mean[-1]), float(dec.ci95[-1]),
                           float(dirc.mean[-1]), float(dirc.ci95[-1]))
