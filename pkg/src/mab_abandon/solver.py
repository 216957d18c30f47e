"""Exact model-based computations.

Everything here assumes the model is known: Bernoulli KL divergence, the
optimal value and Q functions (the optimal policy always pulls the best arm),
gap functions ``V*(s) - Q*(s, a)``, the state orientation of the gaps, the
asymptotic ``log K`` coefficients of the regret bounds, and brute-force
oracles used to cross-check the closed forms.

Arrays indexed by arm are laid out best-first (rank order) unless a name says
otherwise; use ``ArmSet.to_user_order`` to report them.
"""
from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import BanditInstance, BinaryAbandonment

DEFAULT_GRID = 1024
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10**6


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def bernoulli_kl(p: float, q: float) -> float:
    """KL divergence in nats between Bernoulli(p) and Bernoulli(q).

    Uses ``0 log 0 = 0`` and returns ``inf`` when q is 0 or 1 and p differs.
    """
    if p == q:
        return 0.0
    if q <= 0.0 or q >= 1.0:
        return math.inf
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    # roundoff can push values like kl(p, p + 1e-17) slightly negative
    return max(out, 0.0)


class GapOrientation(enum.Enum):
    STANDARD = "standard"    # gap(0, a) >= gap(1, a): explore in state 1
    OPPOSITE = "opposite"    # gap(1, a) >= gap(0, a): explore in state 0
    DEGENERATE = "degenerate"  # gaps equal in both states


@dataclass(frozen=True)
class ValueSolution:
    """Optimal values on a set of states.

    ``states`` is ``[0, 1]`` for the binary model and a uniform grid on
    [0, 1] for the general one. ``q_star`` and ``gap`` have shape
    ``(len(states), M)`` in rank order.
    """

    instance: BanditInstance
    states: np.ndarray
    v: np.ndarray
    q_star: np.ndarray
    gap: np.ndarray
    residual: float = 0.0
    iterations: int = 0

    @property
    def binary(self) -> bool:
        return self.instance.is_binary

    @property
    def v0(self) -> float:
        return float(self.v[0])

    @property
    def v1(self) -> float:
        return float(self.v[-1])

    def value_at(self, s: float) -> float:
        return float(np.interp(s, self.states, self.v))

    def gap_at(self, s: float) -> np.ndarray:
        """Gap row at state ``s`` (rank order).

        Off-grid states of the general model use the exact abandonment curve
        and linearly interpolated values at the two successor states.
        """
        if self.binary:
            if s not in (0, 1):
                raise ValueError("binary model only has states 0 and 1")
            return self.gap[int(s)].copy()
        ab = self.instance.abandonment
        lo = (1.0 - ab.theta) * s
        hi = lo + ab.theta
        w_lo = (1.0 - ab.q(lo)) * self.value_at(lo)
        w_hi = (1.0 - ab.q(hi)) * self.value_at(hi)
        mu = self.instance.arms.sorted_means
        return (mu[0] - mu) * (1.0 + w_hi - w_lo)

    def gap_user_order(self) -> np.ndarray:
        return self.instance.arms.to_user_order(self.gap, axis=1)

    def q_star_user_order(self) -> np.ndarray:
        return self.instance.arms.to_user_order(self.q_star, axis=1)


def _require_binary(instance: BanditInstance) -> BinaryAbandonment:
    if not instance.is_binary:
        raise TypeError("this operation needs a binary-state instance")
    return instance.abandonment


def _policy_values(mu0: float, mu1: float, q: np.ndarray, r0: float, r1: float) -> np.ndarray:
    """Solve the 2x2 system for a stationary policy pulling an arm with mean
    ``mu0`` in state 0 and ``mu1`` in state 1, with per-step payoffs r0, r1.

    Rows: x(s) = r(s) + P(0|s) x(0) + P(1|s) x(1).
    """
    p00 = (1.0 - mu0) * (1.0 - q[0, 0])
    p01 = mu0 * (1.0 - q[0, 1])
    p10 = (1.0 - mu1) * (1.0 - q[1, 0])
    p11 = mu1 * (1.0 - q[1, 1])
    a, b = 1.0 - p00, -p01
    c, d = -p10, 1.0 - p11
    det = a * d - b * c
    if det == 0.0:
        raise np.linalg.LinAlgError("policy is not proper: singular value system")
    return np.array([(r0 * d - b * r1) / det, (a * r1 - c * r0) / det])


def solve_binary_values(instance: BanditInstance) -> ValueSolution:
    """V*, Q* and gaps of the binary model by direct 2x2 elimination."""
    ab = _require_binary(instance)
    mu = instance.arms.sorted_means
    q = ab.table
    v = _policy_values(mu[0], mu[0], q, mu[0], mu[0])
    # Q*(s,a) = mu(a) + (1-mu(a))(1-q(s,0))V*(0) + mu(a)(1-q(s,1))V*(1)
    q_star = np.empty((2, len(mu)))
    for s in (0, 1):
        q_star[s] = mu + (1.0 - mu) * (1.0 - q[s, 0]) * v[0] + mu * (1.0 - q[s, 1]) * v[1]
    gap = v[:, None] - q_star
    gap[:, 0] = 0.0  # exact by construction; removes roundoff
    return ValueSolution(instance, np.array([0.0, 1.0]), v, q_star, gap)


def orientation_factor(solution: ValueSolution) -> float:
    """``(q00 - q10) V*(0) - (q01 - q11) V*(1)``.

    ``gap(0,a) - gap(1,a)`` equals ``(mu(a_1) - mu(a))`` times this factor,
    so its sign decides the orientation for every arm at once.
    """
    q = _require_binary(solution.instance).table
    return (q[0, 0] - q[1, 0]) * solution.v0 - (q[0, 1] - q[1, 1]) * solution.v1


def check_orientation(instance: BanditInstance, solution: Optional[ValueSolution] = None) -> GapOrientation:
    solution = solution or solve_binary_values(instance)
    f = orientation_factor(solution)
    scale = max(1.0, abs(solution.v0), abs(solution.v1))
    mu = instance.arms.sorted_means
    if abs(f) <= 1e-12 * scale or np.all(mu == mu[0]):
        return GapOrientation.DEGENERATE
    return GapOrientation.STANDARD if f > 0 else GapOrientation.OPPOSITE


def sufficient_condition(ab: BinaryAbandonment) -> Optional[bool]:
    """Closed-form test on q implying the standard orientation.

    Returns None when the test does not apply (``q10 == q00`` or
    ``q11 == 1``), which is different from the test failing.
    """
    if ab.q10 == ab.q00 or ab.q11 >= 1.0:
        return None
    lhs = (ab.q01 - ab.q11) / (ab.q00 - ab.q10)
    rhs = min((1.0 - ab.q01) / (1.0 - ab.q11), (1.0 - ab.q00) / (1.0 - ab.q10))
    return bool(lhs <= rhs + 1e-12)


@dataclass(frozen=True)
class BoundConstants:
    """Coefficients of ``log K`` in the asymptotic regret bounds.

    ``*_ub`` are upper bounds for the state-aware algorithms, ``lower_bound``
    is the matching lower bound, ``*_ref`` the state-blind UCB / KL-UCB
    references. ``disc_ulcb_ub`` / ``disc_klulcb_ub`` map the bin count n to
    the discretised bounds (general model only).
    """

    ulcb_ub: float
    klulcb_ub: float
    lower_bound: float
    ucb_ref: float
    klucb_ref: float
    orientation: GapOrientation
    disc_ulcb_ub: dict[int, float]
    disc_klulcb_ub: dict[int, float]

    def as_dict(self) -> dict[str, float]:
        out = {
            "ulcb_ub": float(self.ulcb_ub),
            "klulcb_ub": float(self.klulcb_ub),
            "lower_bound": float(self.lower_bound),
            "ucb_ref": float(self.ucb_ref),
            "klucb_ref": float(self.klucb_ref),
        }
        for n, v in sorted(self.disc_ulcb_ub.items()):
            out[f"disc_ulcb_ub_n{n}"] = float(v)
        for n, v in sorted(self.disc_klulcb_ub.items()):
            out[f"disc_klulcb_ub_n{n}"] = float(v)
        return out


def _sums(gap_row: np.ndarray, mu: np.ndarray) -> tuple[float, float]:
    """(sum gap/(2 delta^2), sum gap/kl(mu_i, mu_1)) over suboptimal arms."""
    hoeffding = kl = 0.0
    for i in range(1, len(mu)):
        delta = mu[0] - mu[i]
        hoeffding += gap_row[i] / (2.0 * delta * delta)
        kl += gap_row[i] / bernoulli_kl(mu[i], mu[0])
    return float(hoeffding), float(kl)


def bound_constants(instance: BanditInstance, solution: Optional[ValueSolution] = None,
                    n_bins: tuple[int, ...] = ()) -> BoundConstants:
    """Asymptotic regret constants.

    Binary model: the state with the smaller gap sets the upper/lower bounds
    and the state with the larger gap sets the UCB/KL-UCB references.
    General model: the gap is non-increasing in s where the theory applies,
    so s=1 plays the role of the small-gap state and s=0 of the large one;
    the discretised bounds use the gap at ``(n-1)/n``.
    """
    mu = instance.arms.sorted_means
    if not mu[0] > mu[1]:
        raise ValueError("bound constants are undefined when mu(a_1) == mu(a_2)")
    if instance.is_binary:
        solution = solution or solve_binary_values(instance)
        orientation = check_orientation(instance, solution)
        if orientation is GapOrientation.DEGENERATE:
            warnings.warn("gaps are equal in both states; using the standard orientation", stacklevel=2)
        small, large = (solution.gap[0], solution.gap[1]) if orientation is GapOrientation.OPPOSITE \
            else (solution.gap[1], solution.gap[0])
    else:
        solution = solution or solve_general_values(instance)
        orientation = GapOrientation.STANDARD
        small, large = solution.gap_at(1.0), solution.gap_at(0.0)
    ub, lb = _sums(small, mu)
    ucb_ref, klucb_ref = _sums(large, mu)
    disc_u, disc_kl = {}, {}
    for n in n_bins:
        if instance.is_binary:
            raise ValueError("discretised bounds only apply to the general-state model")
        if n < 2:
            raise ValueError("need n >= 2 bins")
        disc_u[n], disc_kl[n] = _sums(solution.gap_at((n - 1) / n), mu)
    return BoundConstants(ub, lb, lb, ucb_ref, klucb_ref, orientation, disc_u, disc_kl)


def verify_optimal_policy(instance: BanditInstance, tol: float = 1e-10, max_arms: int = 8) -> bool:
    """Brute force over all M^2 stationary deterministic policies.

    True iff always pulling the best arm attains the componentwise maximum
    value vector (ties allowed).
    """
    ab = _require_binary(instance)
    M = instance.M
    if M > max_arms:
        raise ValueError(f"enumeration budget exceeded: M={M} > {max_arms}")
    mu = instance.arms.sorted_means
    q = ab.table
    best = _policy_values(mu[0], mu[0], q, mu[0], mu[0])
    for a0, a1 in itertools.product(range(M), repeat=2):
        v = _policy_values(mu[a0], mu[a1], q, mu[a0], mu[a1])
        if np.any(v > best + tol):
            return False
    return True


def expected_episode_length(instance: BanditInstance) -> tuple[float, float]:
    """E[episode length | S_1 = 0] and E[... | S_1 = 1] when always pulling a_1.

    Always pulling the best arm also maximises the expected episode length,
    so these are upper bounds over all policies.
    """
    ab = _require_binary(instance)
    mu = instance.arms.sorted_means[0]
    l0, l1 = _policy_values(mu, mu, ab.table, 1.0, 1.0)
    return float(l0), float(l1)


class _GridOperator:
    """Affine Bellman operator ``V -> b + A V`` of always pulling ``a_1``
    on a uniform grid with piecewise-linear interpolation."""

    def __init__(self, instance: BanditInstance, grid_size: int):
        ab = instance.abandonment
        self.states = np.linspace(0.0, 1.0, grid_size)
        lo = (1.0 - ab.theta) * self.states
        hi = lo + ab.theta
        self.w_lo = 1.0 - np.asarray(ab.curve(lo), dtype=float)
        self.w_hi = 1.0 - np.asarray(ab.curve(hi), dtype=float)
        self.lo, self.hi = lo, hi
        self.mu1 = float(instance.arms.sorted_means[0])

    def interp(self, v: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.states, v)

    def continuation(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(1-q(lo)) V(lo)`` and ``(1-q(hi)) V(hi)`` at every grid point."""
        return self.w_lo * self.interp(v, self.lo), self.w_hi * self.interp(v, self.hi)

    def apply(self, v: np.ndarray) -> np.ndarray:
        c_lo, c_hi = self.continuation(v)
        return self.mu1 + (1.0 - self.mu1) * c_lo + self.mu1 * c_hi

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        """Explicit ``(A, b)``; used by the direct-solve cross-check."""
        G = len(self.states)
        A = np.zeros((G, G))
        h = 1.0 / (G - 1)
        for x, w, coef in ((self.lo, self.w_lo, 1.0 - self.mu1), (self.hi, self.w_hi, self.mu1)):
            j = np.minimum((x / h).astype(int), G - 2)
            frac = x / h - j
            rows = np.arange(G)
            np.add.at(A, (rows, j), coef * w * (1.0 - frac))
            np.add.at(A, (rows, j + 1), coef * w * frac)
        return A, np.full(G, self.mu1)


def solve_general_values(instance: BanditInstance, grid_size: int = DEFAULT_GRID,
                         tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> ValueSolution:
    """Value iteration for the general-state model, started from V = 0.

    Stops when the sup-norm change drops below ``tol``; the last change is
    reported as ``residual``.
    """
    if instance.is_binary:
        raise TypeError("solve_general_values needs a general-state instance")
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    if not tol > 0:
        raise ValueError("tol must be positive")
    op = _GridOperator(instance, grid_size)
    v = np.zeros(grid_size)
    residual = math.inf
    for it in range(1, max_iter + 1):
        nxt = op.apply(v)
        residual = float(np.max(np.abs(nxt - v)))
        v = nxt
        if residual < tol:
            break
    else:
        raise ConvergenceError("value iteration did not converge", residual, max_iter)
    return _general_solution(instance, op, v, residual, it)


def solve_general_values_direct(instance: BanditInstance, grid_size: int = DEFAULT_GRID) -> ValueSolution:
    """Fixed point of the same discretised operator by a dense linear solve."""
    op = _GridOperator(instance, grid_size)
    A, b = op.dense()
    v = np.linalg.solve(np.eye(grid_size) - A, b)
    return _general_solution(instance, op, v, 0.0, 0)


def _general_solution(instance: BanditInstance, op: _GridOperator, v: np.ndarray,
                      residual: float, iterations: int) -> ValueSolution:
    mu = instance.arms.sorted_means
    c_lo, c_hi = op.continuation(v)
    q_star = mu[None, :] + (1.0 - mu[None, :]) * c_lo[:, None] + mu[None, :] * c_hi[:, None]
    # gap(s, a_i) = (mu_1 - mu_i) (1 + c_hi(s) - c_lo(s)); exact zero for a_1
    gap = (mu[0] - mu)[None, :] * (1.0 + c_hi - c_lo)[:, None]
    return ValueSolution(instance, op.states, v, q_star, gap, residual, iterations)


def check_gap_monotonicity(solution: ValueSolution, tol: float = 1e-9) -> bool:
    """True iff every gap column is non-increasing in s on the grid."""
    if solution.binary:
        raise TypeError("gap monotonicity is a general-state check")
    d = np.diff(solution.gap[:, 1:], axis=0)
    scale = max(1.0, float(np.max(np.abs(solution.gap))))
    return bool(np.all(d <= tol * scale))


def is_non_decreasing(values: np.ndarray, tol: float = 1e-9) -> bool:
    scale = max(1.0, float(np.max(np.abs(values))))
    return bool(np.all(np.diff(values) >= -tol * scale))
