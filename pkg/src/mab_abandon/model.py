"""Ground-truth dynamics of the bandit-with-abandonment model.

Two state models are supported. In the binary model the state is the previous
reward (0 or 1) and abandonment happens with probability ``q(state, reward)``.
In the general model the state is an exponential moving average of the
rewards in the current episode, ``s' = (1 - theta) s + theta r``, and the user
abandons with probability ``q(s')``.

Arms are Bernoulli. :class:`ArmSet` keeps the means in the order the user gave
them and records the permutation that sorts them best-first, so solvers can
work on ``a_1 >= a_2 >= ...`` while reports stay in user order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

TERMINAL = None
"""Marker for the absorbing state ``g`` reached on abandonment."""


class AssumptionError(ValueError):
    """Raised when an instance violates a named modelling assumption."""

    def __init__(self, assumption: str, detail: str):
        self.assumption = assumption
        super().__init__(f"{assumption} violated: {detail}")


class DegenerateInstanceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ArmSet:
    """Bernoulli arm means in user order.

    ``order[i]`` is the user index of the arm ranked ``i`` (0 = best).
    Pass ``strict=False`` to build deliberately degenerate arm sets (e.g. a
    mean of exactly 1) for testing the samplers.
    """

    means: tuple[float, ...]
    strict: bool = True
    order: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        means = tuple(float(m) for m in self.means)
        object.__setattr__(self, "means", means)
        if any(not (0.0 <= m <= 1.0) for m in means):
            raise AssumptionError("Assumption 1", "arm means must lie in [0, 1]")
        # stable sort keeps the user's order among equal means
        order = tuple(sorted(range(len(means)), key=lambda i: -means[i]))
        object.__setattr__(self, "order", order)
        if not self.strict:
            return
        if len(means) < 2:
            raise AssumptionError("Assumption 1", "need at least M >= 2 arms")
        if means[order[0]] >= 1.0:
            raise AssumptionError("Assumption 1", "best arm mean must satisfy mu(a_1) < 1")
        if means[order[0]] == means[order[1]]:
            warnings.warn(
                "mu(a_1) == mu(a_2): regret-bound constants are undefined for this instance",
                DegenerateInstanceWarning,
                stacklevel=3,
            )

    @property
    def M(self) -> int:
        return len(self.means)

    @property
    def sorted_means(self) -> np.ndarray:
        return np.array([self.means[i] for i in self.order])

    @property
    def best(self) -> int:
        """User index of the best arm."""
        return self.order[0]

    @property
    def degenerate(self) -> bool:
        s = self.sorted_means
        return len(s) < 2 or s[0] == s[1]

    def to_user_order(self, values: np.ndarray, axis: int = -1) -> np.ndarray:
        """Re-index an array laid out in sorted (best-first) order to user order."""
        values = np.asarray(values)
        out = np.empty_like(values)
        idx = [slice(None)] * values.ndim
        src = [slice(None)] * values.ndim
        for rank, user in enumerate(self.order):
            idx[axis], src[axis] = user, rank
            out[tuple(idx)] = values[tuple(src)]
        return out

    def to_sorted_order(self, values: np.ndarray, axis: int = -1) -> np.ndarray:
        values = np.asarray(values)
        return np.take(values, list(self.order), axis=axis)


@dataclass(frozen=True)
class BinaryAbandonment:
    """Abandonment probabilities ``q(state, reward)`` of the binary model."""

    q00: float
    q01: float
    q10: float
    q11: float

    def __post_init__(self):
        for name in ("q00", "q01", "q10", "q11"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise AssumptionError("Assumption 1", f"{name}={v} is not a probability")
            object.__setattr__(self, name, v)
        if not self.q00 > 0.0:
            raise AssumptionError("Assumption 1", "q(0,0)>0 is required for every policy to be proper")
        # q(i,j) >= q(i',j') whenever i+j < i'+j'
        if not (self.q00 >= self.q01 and self.q00 >= self.q10
                and self.q01 >= self.q11 and self.q10 >= self.q11):
            raise AssumptionError(
                "Assumption 1",
                "q must be monotone: q(i,j) >= q(i',j') whenever i+j < i'+j'",
            )

    def q(self, state: int, reward: int) -> float:
        return self.table[state, reward]

    @property
    def table(self) -> np.ndarray:
        return np.array([[self.q00, self.q01], [self.q10, self.q11]])


class AbandonmentCurve:
    """Non-increasing map ``s -> q(s)`` on [0, 1]."""

    def __call__(self, s):
        raise NotImplementedError

    def check_monotone(self, points: int = 1000) -> None:
        grid = np.linspace(0.0, 1.0, points)
        vals = np.asarray(self(grid), dtype=float)
        if np.any(vals < 0) or np.any(vals > 1):
            raise AssumptionError("Assumption 2", "abandonment curve leaves [0, 1]")
        if np.any(np.diff(vals) > 1e-15):
            raise AssumptionError("Assumption 2", "abandonment curve must be non-increasing in s")
        if np.any(vals[:-1] <= 0):
            raise AssumptionError("Assumption 2", "q(s) must be positive for s < 1")


@dataclass(frozen=True)
class LogCurve(AbandonmentCurve):
    """``q(s) = 1 - log(c6 s + 1) / log(c6 + 1)``.

    Note ``q(1) = 0``: the episode never ends from the state s = 1 alone, so
    simulations rely on the episode cap for a hard termination guarantee.
    """

    c6: float

    def __post_init__(self):
        if not self.c6 > 0:
            raise AssumptionError("Assumption 2", "log curve needs c6 > 0")
        self.check_monotone()

    def __call__(self, s):
        # clip: roundoff can give -1e-16 at s = 1
        q = 1.0 - np.log1p(self.c6 * np.asarray(s, dtype=float)) / math.log1p(self.c6)
        return np.clip(q, 0.0, 1.0)


@dataclass(frozen=True)
class TableCurve(AbandonmentCurve):
    """Piecewise-linear curve through ``(s, q)`` points covering [0, 1]."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple(sorted((float(s), float(q)) for s, q in self.points))
        object.__setattr__(self, "points", pts)
        xs = [p[0] for p in pts]
        if len(pts) < 2 or xs[0] != 0.0 or xs[-1] != 1.0:
            raise AssumptionError("Assumption 2", "table points must span s=0 to s=1")
        if len(set(xs)) != len(xs):
            raise AssumptionError("Assumption 2", "duplicate s in abandonment table")
        self.check_monotone()

    @property
    def xs(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def ys(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    def __call__(self, s):
        return np.interp(s, self.xs, self.ys)


@dataclass(frozen=True)
class GeneralAbandonment:
    curve: AbandonmentCurve
    theta: float

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise AssumptionError("Assumption 2", "forgetting factor theta must lie in (0, 1)")

    def q(self, s: float) -> float:
        return float(self.curve(s))


Abandonment = Union[BinaryAbandonment, GeneralAbandonment]


@dataclass(frozen=True)
class BanditInstance:
    """Arms plus abandonment model plus initial-state law.

    ``initial_state`` is P(S_1 = 1) for the binary model and the (fixed)
    starting state for the general model. The default 1.0 means every
    episode starts in state 1.
    """

    arms: ArmSet
    abandonment: Abandonment
    initial_state: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.initial_state <= 1.0:
            raise ValueError("initial_state must lie in [0, 1]")

    @classmethod
    def binary(cls, means: Sequence[float], q00: float, q01: float, q10: float, q11: float,
               initial_state: float = 1.0) -> "BanditInstance":
        return cls(ArmSet(tuple(means)), BinaryAbandonment(q00, q01, q10, q11), initial_state)

    @classmethod
    def general(cls, means: Sequence[float], curve: AbandonmentCurve, theta: float,
                initial_state: float = 1.0) -> "BanditInstance":
        return cls(ArmSet(tuple(means)), GeneralAbandonment(curve, theta), initial_state)

    @property
    def is_binary(self) -> bool:
        return isinstance(self.abandonment, BinaryAbandonment)

    @property
    def M(self) -> int:
        return self.arms.M

    def sample_initial_state(self, rng: np.random.Generator):
        p = self.initial_state
        if not self.is_binary:
            return p
        if p >= 1.0:
            return 1
        if p <= 0.0:
            return 0
        return int(rng.random() < p)


@dataclass(frozen=True)
class StepOutcome:
    reward: int
    next_state: Union[int, float, None]

    @property
    def terminal(self) -> bool:
        return self.next_state is TERMINAL


def _check_arm(instance: BanditInstance, arm: int) -> None:
    if not 0 <= arm < instance.M:
        raise IndexError(f"arm {arm} out of range for M={instance.M}")


def sample_reward(instance: BanditInstance, arm: int, rng: np.random.Generator) -> int:
    _check_arm(instance, arm)
    return int(rng.random() < instance.arms.means[arm])


def binary_step(state: int, arm: int, instance: BanditInstance, rng: np.random.Generator) -> StepOutcome:
    """One pull in the binary model: draw the reward, then the abandonment."""
    if not instance.is_binary:
        raise TypeError("binary_step called on a general-state instance")
    if state not in (0, 1):
        raise ValueError(f"binary state must be 0 or 1, got {state!r}")
    reward = sample_reward(instance, arm, rng)
    # one uniform per step for abandonment, even when q is 0 or 1
    if rng.random() < instance.abandonment.q(state, reward):
        return StepOutcome(reward, TERMINAL)
    return StepOutcome(reward, reward)


def general_step(state: float, arm: int, instance: BanditInstance, rng: np.random.Generator) -> StepOutcome:
    if instance.is_binary:
        raise TypeError("general_step called on a binary instance")
    if not 0.0 <= state <= 1.0:
        raise ValueError(f"state {state} outside [0, 1]")
    ab = instance.abandonment
    reward = sample_reward(instance, arm, rng)
    nxt = (1.0 - ab.theta) * state + ab.theta * reward
    if rng.random() < ab.q(nxt):
        return StepOutcome(reward, TERMINAL)
    return StepOutcome(reward, nxt)


def step(state, arm: int, instance: BanditInstance, rng: np.random.Generator) -> StepOutcome:
    if instance.is_binary:
        return binary_step(state, arm, instance, rng)
    return general_step(state, arm, instance, rng)


def transition_probs(instance: BanditInstance, state, arm: int) -> tuple[float, float, float]:
    """Exact ``(P(low successor), P(high successor), P(g))`` for one pull.

    In the binary model the successors are the states 0 and 1; in the general
    model they are ``(1-theta)s`` and ``(1-theta)s + theta``.
    """
    _check_arm(instance, arm)
    mu = instance.arms.means[arm]
    if instance.is_binary:
        if state not in (0, 1):
            raise ValueError(f"binary state must be 0 or 1, got {state!r}")
        q_lo, q_hi = instance.abandonment.q(state, 0), instance.abandonment.q(state, 1)
    else:
        if not 0.0 <= state <= 1.0:
            raise ValueError(f"state {state} outside [0, 1]")
        ab = instance.abandonment
        lo = (1.0 - ab.theta) * state
        q_lo, q_hi = ab.q(lo), ab.q(lo + ab.theta)
    p_lo = (1.0 - mu) * (1.0 - q_lo)
    p_hi = mu * (1.0 - q_hi)
    p_g = (1.0 - mu) * q_lo + mu * q_hi
    return p_lo, p_hi, p_g


def replication_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent stream for replication ``index``; depends on nothing else."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))
