"""Action selection: state-aware index policies and the baselines.

This is the readable reference implementation, one decision at a time. The
Monte-Carlo harness runs a compiled twin (``_kernels``); the two are
cross-checked step for step in the test suite.

Arms are 0-based here; arm 0 of a sorted instance is the best arm.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels as _kern



class Kind(enum.Enum):
    ULCB = "ULCB"
    KL_ULCB = "KL-ULCB"
    UCB = "UCB"
    KL_UCB = "KL-UCB"
    DISC_ULCB = "DISC-ULCB"
    DISC_KL_ULCB = "DISC-KL-ULCB"
    CONT_ULCB = "CONT-ULCB"
    CONT_KL_ULCB = "CONT-KL-ULCB"
    Q_EPS = "Q-EPS"
    Q_UCB = "Q-UCB"
    # always pulls arm ``fixed_arm``; used for zero-regret checks
    FIXED = "FIXED"

    @property
    def uses_kl(self) -> bool:
        return self in (Kind.KL_ULCB, Kind.KL_UCB, Kind.DISC_KL_ULCB, Kind.CONT_KL_ULCB)

    @property
    def q_learning(self) -> bool:
        return self in (Kind.Q_EPS, Kind.Q_UCB)


class Orientation(enum.Enum):
    STANDARD = "standard"
    OPPOSITE = "opposite"


@dataclass(frozen=True)
class PolicySpec:
    """Everything needed to pick actions.

    Build with :meth:`make` to get the per-kind defaults: ULCB uses
    ``c0=-1, c1=1`` (swapped for the opposite orientation), the KL variants
    and UCB use ``c0=c1=1``. ``c`` weights the ``log log t`` term and is 0 by
    default. ``H=None`` for Q-UCB means "use the longest expected episode".
    """

    kind: Kind
    c0: float = 1.0
    c1: float = 1.0
    c: float = 0.0
    orientation: Orientation = Orientation.STANDARD
    n_bins: int = 2
    epsilon: float = 0.1
    H: Optional[float] = None
    bonus_c: float = 4.0
    q_init: float = 0.0
    fixed_arm: int = 0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("c must be non-negative")
        if self.n_bins < 2:
            raise ValueError("n_bins must be at least 2")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.H is not None and self.H <= 0:
            raise ValueError("H must be positive")

    @classmethod
    def make(cls, kind, **overrides) -> "PolicySpec":
        kind = Kind(kind) if not isinstance(kind, Kind) else kind
        orientation = Orientation(overrides.get("orientation", Orientation.STANDARD))
        defaults: dict = {"orientation": orientation}
        if kind in (Kind.ULCB, Kind.DISC_ULCB):
            sign = 1.0 if orientation is Orientation.STANDARD else -1.0
            defaults.update(c0=-sign, c1=sign)
        defaults.update(overrides)
        defaults["orientation"] = Orientation(defaults["orientation"])
        return cls(kind=kind, **defaults)

    def with_H(self, H: float) -> "PolicySpec":
        return replace(self, H=H)


@dataclass
class AgentState:
    """Pull counts, integer reward sums and the global step ``t``."""

    counts: np.ndarray
    sums: np.ndarray
    t: int = 1

    @classmethod
    def fresh(cls, M: int) -> "AgentState":
        return cls(np.zeros(M, dtype=np.int64), np.zeros(M, dtype=np.int64), 1)

    @property
    def M(self) -> int:
        return len(self.counts)

    def mean(self, arm: int) -> float:
        n = self.counts[arm]
        if n == 0:
            return math.nan
        return self.sums[arm] / n

    @property
    def means(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.sums / np.maximum(self.counts, 1), np.nan)


def update(agent: AgentState, arm: int, reward: int) -> AgentState:
    """Record one pull. Mutates and returns ``agent``."""
    if reward not in (0, 1):
        raise ValueError("reward must be 0 or 1")
    agent.counts[arm] += 1
    agent.sums[arm] += reward
    agent.t += 1
    return agent


def exploration_level(t: int, coeff: float, c: float) -> float:
    """``coeff * log t + c * log(log t)``; the log-log term is dropped when
    c == 0 or when ``log log t`` is undefined (t <= 1)."""
    lt = math.log(t) if t > 0 else 0.0
    level = coeff * lt
    if c > 0 and lt > 0:
        level += c * math.log(lt)
    return level


def ulcb_index(agent: AgentState, arm: int, coeff: float, c: float = 0.0) -> float:
    n = agent.counts[arm]
    if n == 0:
        raise ValueError(f"arm {arm} has not been pulled")
    # a negative radicand only happens for c > 0 at small t; clamp to a zero radius
    level = max(exploration_level(agent.t, 1.0, c), 0.0)
    return agent.mean(arm) + coeff * math.sqrt(level / (2.0 * n))


def kl_index_upper(mu_bar: float, n: int, threshold: float) -> float:
    """Largest p in [mu_bar, 1] with ``n kl(mu_bar, p) <= threshold``, by bisection.

    Stops once the bracket is within ``KL_TOL`` and the budget is used up to
    ``KL_TOL`` as well (or the bracket cannot shrink in floating point). The
    loop is compiled; at large n it runs to float resolution.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(_kern.bisect_upper(float(mu_bar), int(n), float(threshold)))


def kl_index_lower(mu_bar: float, n: int, threshold: float) -> float:
    """Smallest p in [0, mu_bar] with ``n kl(mu_bar, p) <= threshold``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(_kern.bisect_lower(float(mu_bar), int(n), float(threshold)))


def disc_state_map(s: float, n: int) -> int:
    """Collapse a general state to 1 on the top bin ``[(n-1)/n, 1]``, else 0."""
    if n < 2:
        raise ValueError("need n >= 2 bins")
    # s >= (n-1)/n written without the division so s = 0.75, n = 4 is exact
    return int(n * s >= n - 1)


@dataclass
class QTable:
    """Q estimates and visit counts over states {0, 1}; Q(g, .) is 0."""

    q: np.ndarray
    visits: np.ndarray = field(default=None)

    @classmethod
    def fresh(cls, M: int, init: float = 0.0) -> "QTable":
        return cls(np.full((2, M), float(init)), np.zeros((2, M), dtype=np.int64))

    def value(self, s) -> float:
        if s is None:
            return 0.0
        return float(np.max(self.q[s]))


def _argmax(values) -> int:
    # first maximiser: ties go to the lowest arm index
    best, arg = -math.inf, 0
    for i, v in enumerate(values):
        if v > best:
            best, arg = v, i
    return arg


def _kl_index(agent: AgentState, arm: int, upper: bool, coeff: float, c: float) -> float:
    level = max(exploration_level(agent.t, coeff, c), 0.0)
    mu_bar, n = agent.mean(arm), int(agent.counts[arm])
    return kl_index_upper(mu_bar, n, level) if upper else kl_index_lower(mu_bar, n, level)


def index_values(spec: PolicySpec, state, agent: AgentState) -> list[float]:
    """Per-arm indices used by an index policy in ``state`` (all arms pulled)."""
    kind, M = spec.kind, agent.M
    if kind in (Kind.DISC_ULCB, Kind.DISC_KL_ULCB):
        state = disc_state_map(state, spec.n_bins)
        kind = Kind.ULCB if kind is Kind.DISC_ULCB else Kind.KL_ULCB
    if kind is Kind.UCB:
        return [ulcb_index(agent, a, spec.c1, spec.c) for a in range(M)]
    if kind is Kind.ULCB:
        coeff = spec.c1 if state == 1 else spec.c0
        return [ulcb_index(agent, a, coeff, spec.c) for a in range(M)]
    if kind is Kind.KL_UCB:
        return [_kl_index(agent, a, True, spec.c1, spec.c) for a in range(M)]
    if kind is Kind.KL_ULCB:
        upper = state == 1
        if spec.orientation is Orientation.OPPOSITE:
            upper = not upper
        coeff = spec.c1 if state == 1 else spec.c0
        return [_kl_index(agent, a, upper, coeff, spec.c) for a in range(M)]
    s = state if spec.orientation is Orientation.STANDARD else 1.0 - state
    if kind is Kind.CONT_ULCB:
        return [ulcb_index(agent, a, 2.0 * s - 1.0, spec.c) for a in range(M)]
    if kind is Kind.CONT_KL_ULCB:
        if s <= 0.5:
            return [_kl_index(agent, a, False, 1.0 - 2.0 * s, spec.c) for a in range(M)]
        return [_kl_index(agent, a, True, 2.0 * s - 1.0, spec.c) for a in range(M)]
    raise ValueError(f"{kind} is not an index policy")


def select_action(spec: PolicySpec, state, agent: AgentState, qtable: Optional[QTable] = None,
                  rng: Optional[np.random.Generator] = None) -> int:
    if state is None:
        raise ValueError("no action is taken in the terminal state")
    if spec.kind is Kind.FIXED:
        return spec.fixed_arm
    unpulled = np.flatnonzero(agent.counts == 0)
    if len(unpulled):
        return int(unpulled[0])
    if spec.kind is Kind.Q_EPS:
        if qtable is None or rng is None:
            raise ValueError("Q-EPS needs a QTable and a random stream")
        if rng.random() < spec.epsilon:
            return min(int(rng.random() * agent.M), agent.M - 1)
        return _argmax(qtable.q[state])
    if spec.kind is Kind.Q_UCB:
        if qtable is None:
            raise ValueError("Q-UCB needs a QTable")
        if spec.H is None:
            raise ValueError("Q-UCB needs H; resolve it from the instance first")
        lt = math.log(agent.t)
        scores = []
        for a in range(agent.M):
            n = qtable.visits[state, a]
            scores.append(math.inf if n == 0 else
                          qtable.q[state, a] + spec.bonus_c * math.sqrt(spec.H * lt / n))
        return _argmax(scores)
    return _argmax(index_values(spec, state, agent))


def qlearn_step(qtable: QTable, s: int, a: int, r: int, s_next, spec: PolicySpec) -> QTable:
    """Undiscounted tabular update; ``s_next=None`` is the terminal state."""
    if not spec.kind.q_learning:
        raise ValueError("qlearn_step needs a Q-learning spec")
    qtable.visits[s, a] += 1
    n = qtable.visits[s, a]
    if spec.kind is Kind.Q_EPS:
        alpha = 1.0 / n
    else:
        alpha = (spec.H + 1.0) / (spec.H + n)
    target = r + qtable.value(s_next)
    qtable.q[s, a] = (1.0 - alpha) * qtable.q[s, a] + alpha * target
    return qtable
