"""Compiled trial loop.

Mirrors ``policies.select_action`` / ``model.step`` and consumes the random
stream in exactly the same order, so a trial here and a trial of the
reference loop in ``simulator`` produce the same trajectory for the same seed.

KL indices are computed with safeguarded Newton iterations instead of plain
bisection. Each arm caches its index at two exploration levels; since the
index is monotone in the level, the pair brackets the index until the level
leaves the cached range, and exact inversion is only needed when brackets
overlap. The arm pulled on the previous step is never inverted: it is
compared with the leader through one or two KL evaluations.

Helpers take scalars only. Passing arrays between compiled functions costs
reference-count traffic on every call, so all array work lives in
``run_trial`` itself.
"""
import math

import numpy as np
from numba import njit

# policy kinds
ULCB, KL_ULCB, UCB, KL_UCB = 0, 1, 2, 3
DISC_ULCB, DISC_KL_ULCB, CONT_ULCB, CONT_KL_ULCB = 4, 5, 6, 7
Q_EPS, Q_UCB, FIXED = 8, 9, 10

# float policy params
P_C0, P_C1, P_C, P_EPS, P_H, P_BONUS, P_QINIT = range(7)
# int policy params
I_KIND, I_OPPOSITE, I_NBINS, I_FIXED = range(4)

CURVE_LOG, CURVE_TABLE = 0, 1

KL_LO = 1e-12
KL_HI = 1.0 - 1e-12
KL_TOL = 1e-9
# Newton converges quadratically, so a step this small leaves an error far below KL_TOL
NEWTON_STEP_TOL = 1e-8
MAX_ITER = 100
# cached index brackets span levels [lv, lv * (1 + REL) + ABS]
BRACKET_REL = 0.01
BRACKET_ABS = 1e-3
BRACKET_PAD = 2e-9


@njit(cache=True)
def kl(p, q):
    if p == q:
        return 0.0
    if q <= 0.0 or q >= 1.0:
        return np.inf
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return max(out, 0.0)


@njit(cache=True)
def kl_upper(mu, budget, start):
    """Largest p in [mu, KL_HI] with kl(mu, p) <= budget."""
    if budget <= 0.0:
        return mu
    if mu >= 1.0:
        return 1.0
    # Pinsker: kl(mu, KL_HI) >= 2 (KL_HI - mu)^2, so the clamp test is often unnecessary
    gap = KL_HI - mu
    if budget >= 2.0 * gap * gap and kl(mu, KL_HI) <= budget:
        return KL_HI
    a = max(mu, KL_LO)  # f(a) <= 0
    b = KL_HI           # f(b) > 0
    x = start
    if not (a < x < b):
        x = mu + math.sqrt(0.5 * budget)
        if not (a < x < b):
            x = 0.5 * (a + b)
    for _ in range(MAX_ITER):
        fx = kl(mu, x) - budget
        if fx <= 0.0:
            a = x
        else:
            b = x
        if b - a <= KL_TOL:
            return a
        d = (x - mu) / (x * (1.0 - x))
        nx = x - fx / d if d > 0.0 else -1.0
        if not (a < nx < b):
            nx = 0.5 * (a + b)
        if abs(nx - x) <= NEWTON_STEP_TOL:
            return nx
        x = nx
    return a


@njit(cache=True)
def kl_lower(mu, budget, start):
    """Smallest p in [KL_LO, mu] with kl(mu, p) <= budget."""
    if budget <= 0.0 or mu <= 0.0:
        return mu
    gap = mu - KL_LO
    if budget >= 2.0 * gap * gap and kl(mu, KL_LO) <= budget:
        return KL_LO
    a = KL_LO           # f(a) > 0
    b = min(mu, KL_HI)  # f(b) <= 0
    x = start
    if not (a < x < b):
        x = mu - math.sqrt(0.5 * budget)
        if not (a < x < b):
            x = 0.5 * (a + b)
    for _ in range(MAX_ITER):
        fx = kl(mu, x) - budget
        if fx <= 0.0:
            b = x
        else:
            a = x
        if b - a <= KL_TOL:
            return b
        d = (x - mu) / (x * (1.0 - x))
        nx = x - fx / d if d < 0.0 else -1.0
        if not (a < nx < b):
            nx = 0.5 * (a + b)
        if abs(nx - x) <= NEWTON_STEP_TOL:
            return nx
        x = nx
    return b


@njit(cache=True)
def invert(upper, mu, budget, start):
    if upper:
        return kl_upper(mu, budget, start)
    return kl_lower(mu, budget, start)


@njit(cache=True)
def bisect_upper(mu, n, threshold):
    """Plain bisection twin of ``policies.kl_index_upper``."""
    if threshold <= 0.0:
        return mu
    if mu >= 1.0:
        return 1.0
    budget = threshold / n
    lo = max(mu, KL_LO)
    hi = KL_HI
    if kl(mu, hi) <= budget:
        return hi
    f_lo = kl(mu, lo)
    if f_lo > budget:
        return mu
    for _ in range(MAX_ITER):
        if hi - lo <= KL_TOL and n * (budget - f_lo) <= KL_TOL:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = kl(mu, mid)
        if f_mid <= budget:
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return lo


@njit(cache=True)
def bisect_lower(mu, n, threshold):
    """Plain bisection twin of ``policies.kl_index_lower``."""
    if threshold <= 0.0 or mu <= 0.0:
        return mu
    budget = threshold / n
    lo = KL_LO
    hi = min(mu, KL_HI)
    if kl(mu, lo) <= budget:
        return lo
    f_hi = kl(mu, hi)
    if f_hi > budget:
        return mu
    for _ in range(MAX_ITER):
        if hi - lo <= KL_TOL and n * (budget - f_hi) <= KL_TOL:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = kl(mu, mid)
        if f_mid <= budget:
            hi, f_hi = mid, f_mid
        else:
            lo = mid
    return hi


@njit(cache=True)
def fresh_cmp(upper, mu, budget, x):
    """Sign of (index of an arm with mean mu and budget) - x, via one kl test."""
    if budget <= 0.0:
        return 1 if mu > x else (-1 if mu < x else 0)
    if upper:
        if mu >= 1.0:
            return 1 if x < 1.0 else (-1 if x > 1.0 else 0)
        if x < mu:
            return 1
        if x > KL_HI:
            return -1
        if x == KL_HI:
            # the index is clamped at KL_HI
            return 0 if kl(mu, KL_HI) <= budget else -1
        d = kl(mu, x)
        return 1 if d < budget else (-1 if d > budget else 0)
    if mu <= 0.0:
        return 1 if x < 0.0 else (-1 if x > 0.0 else 0)
    if x >= mu:
        return -1
    if x < KL_LO:
        return 1
    if x == KL_LO:
        return 0 if kl(mu, KL_LO) <= budget else 1
    d = kl(mu, x)
    return 1 if d > budget else (-1 if d < budget else 0)


@njit(cache=True)
def level(t, coeff, c):
    lt = math.log(t)
    out = coeff * lt
    if c > 0.0 and lt > 0.0:
        out += c * math.log(lt)
    return out


@njit(cache=True)
def log_curve(s, c6):
    return min(max(1.0 - math.log1p(c6 * s) / math.log1p(c6), 0.0), 1.0)


@njit(cache=True)
def disc(s, n):
    return 1 if n * s >= n - 1 else 0


@njit(cache=True)
def run_trial(rng, fp, ip, means, binary, qtab, theta, curve_kind, c6, cx, cy,
              init_state, gap_tab, vgrid, best_arm, K, cap, direct, out):
    """Play K episodes; write cumulative regret after each episode into out.

    Returns (number of truncated episodes, total policy steps).
    """
    M = means.shape[0]
    G = vgrid.shape[0]
    kind = ip[I_KIND]
    opposite = ip[I_OPPOSITE] == 1
    n_bins = ip[I_NBINS]
    c0, c1, c = fp[P_C0], fp[P_C1], fp[P_C]
    use_kl = kind == KL_ULCB or kind == KL_UCB or kind == DISC_KL_ULCB or kind == CONT_KL_ULCB
    counts = np.zeros(M, dtype=np.int64)
    sums = np.zeros(M, dtype=np.int64)
    # index cache: value v_a at level lv_a, v_b at lv_b, per side (0 lower, 1 upper)
    lv_a = np.zeros((2, M))
    v_a = np.full((2, M), -1.0)
    lv_b = np.zeros((2, M))
    v_b = np.zeros((2, M))
    cache_ok = np.zeros((2, M), dtype=np.bool_)
    lo_s = np.zeros(M)
    hi_s = np.zeros(M)
    qv = np.full((2, M), fp[P_QINIT])
    qn = np.zeros((2, M), dtype=np.int64)
    t = 1
    fresh = -1
    truncated = 0
    total_steps = 0
    cum = 0.0
    for k in range(K):
        if binary:
            if init_state >= 1.0:
                s = 1.0
            elif init_state <= 0.0:
                s = 0.0
            else:
                s = 1.0 if rng.random() < init_state else 0.0
        else:
            s = init_state
        s_first = s
        ep_reward = 0.0
        h = 0
        while True:
            if h >= cap:
                truncated += 1
                break
            # ---- select ----
            a = -1
            if kind == FIXED:
                a = ip[I_FIXED]
            else:
                for i in range(M):
                    if counts[i] == 0:
                        a = i
                        break
            if a < 0:
                si = int(s)
                if kind == Q_EPS:
                    if rng.random() < fp[P_EPS]:
                        a = min(int(rng.random() * M), M - 1)
                    else:
                        a = 0
                        for i in range(1, M):
                            if qv[si, i] > qv[si, a]:
                                a = i
                elif kind == Q_UCB:
                    lt = math.log(t)
                    bestv = -np.inf
                    for i in range(M):
                        if qn[si, i] == 0:
                            v = np.inf
                        else:
                            v = qv[si, i] + fp[P_BONUS] * math.sqrt(fp[P_H] * lt / qn[si, i])
                        if a < 0 or v > bestv:
                            a = i
                            bestv = v
                else:
                    upper = True
                    coeff = c1
                    if kind == ULCB or kind == KL_ULCB or kind == DISC_ULCB or kind == DISC_KL_ULCB:
                        st = si if (kind == ULCB or kind == KL_ULCB) else disc(s, n_bins)
                        coeff = c1 if st == 1 else c0
                        upper = (st == 1) != opposite
                    elif kind == CONT_ULCB or kind == CONT_KL_ULCB:
                        se = 1.0 - s if opposite else s
                        if kind == CONT_ULCB:
                            coeff = 2.0 * se - 1.0
                        elif se <= 0.5:
                            upper = False
                            coeff = 1.0 - 2.0 * se
                        else:
                            coeff = 2.0 * se - 1.0
                    if not use_kl:
                        lv = max(level(t, 1.0, c), 0.0)
                        bestv = -np.inf
                        for i in range(M):
                            v = sums[i] / counts[i] + coeff * math.sqrt(lv / (2.0 * counts[i]))
                            if v > bestv:
                                a = i
                                bestv = v
                    else:
                        lv = max(level(t, coeff, c), 0.0)
                        side = 1 if upper else 0
                        # brackets for every arm except the fresh one
                        arg = -1
                        maxlo = -np.inf
                        for i in range(M):
                            if i == fresh:
                                continue
                            if cache_ok[side, i] and lv_a[side, i] <= lv <= lv_b[side, i]:
                                if lv == lv_a[side, i]:
                                    lo = v_a[side, i]
                                    hi = lo
                                elif lv == lv_b[side, i]:
                                    lo = v_b[side, i]
                                    hi = lo
                                else:
                                    lo = min(v_a[side, i], v_b[side, i]) - BRACKET_PAD
                                    hi = max(v_a[side, i], v_b[side, i]) + BRACKET_PAD
                            else:
                                n_i = counts[i]
                                mu_i = sums[i] / n_i
                                start = v_a[side, i] if cache_ok[side, i] else -1.0
                                lo = invert(upper, mu_i, lv / n_i, start)
                                hi = lo
                                far = lv * (1.0 + BRACKET_REL) + BRACKET_ABS
                                lv_a[side, i] = lv
                                v_a[side, i] = lo
                                lv_b[side, i] = far
                                v_b[side, i] = invert(upper, mu_i, far / n_i, lo)
                                cache_ok[side, i] = True
                            lo_s[i] = lo
                            hi_s[i] = hi
                            if arg < 0 or lo > maxlo:
                                arg = i
                                maxlo = lo
                        if arg < 0:
                            a = fresh
                        else:
                            clash = False
                            for i in range(M):
                                if i != fresh and i != arg and hi_s[i] >= maxlo:
                                    clash = True
                            best = arg
                            if clash:
                                # resolve overlapping brackets exactly
                                best = -1
                                bestv = -np.inf
                                for i in range(M):
                                    if i == fresh:
                                        continue
                                    v = lo_s[i]
                                    if lo_s[i] != hi_s[i]:
                                        v = invert(upper, sums[i] / counts[i], lv / counts[i],
                                                   v_a[side, i])
                                        lo_s[i] = v
                                        hi_s[i] = v
                                    # equal statistics mean equal indices: keep the lower arm
                                    if best < 0 or (v > bestv and not (counts[i] == counts[best]
                                                                       and sums[i] == sums[best])):
                                        best = i
                                        bestv = v
                            f = fresh
                            if f < 0:
                                a = best
                            elif counts[f] == counts[best] and sums[f] == sums[best]:
                                a = min(f, best)
                            else:
                                mu_f = sums[f] / counts[f]
                                budget = lv / counts[f]
                                x = lo_s[best]
                                if lo_s[best] != hi_s[best]:
                                    if fresh_cmp(upper, mu_f, budget, hi_s[best]) > 0:
                                        a = f
                                    elif fresh_cmp(upper, mu_f, budget, lo_s[best]) < 0:
                                        a = best
                                    else:
                                        x = invert(upper, sums[best] / counts[best],
                                                   lv / counts[best], v_a[side, best])
                                if a < 0:
                                    cmp = fresh_cmp(upper, mu_f, budget, x)
                                    a = f if (cmp > 0 or (cmp == 0 and f < best)) else best
            # ---- regret ----
            if not direct:
                if binary:
                    cum += gap_tab[int(s), a]
                elif a != best_arm:
                    lo_st = (1.0 - theta) * s
                    hi_st = lo_st + theta
                    if curve_kind == CURVE_LOG:
                        q_lo = log_curve(lo_st, c6)
                        q_hi = log_curve(hi_st, c6)
                    else:
                        q_lo = np.interp(lo_st, cx, cy)
                        q_hi = np.interp(hi_st, cx, cy)
                    # linear interpolation on the uniform value grid
                    pos = lo_st * (G - 1)
                    j = min(int(pos), G - 2)
                    w_lo = vgrid[j] + (pos - j) * (vgrid[j + 1] - vgrid[j])
                    pos = hi_st * (G - 1)
                    j = min(int(pos), G - 2)
                    w_hi = vgrid[j] + (pos - j) * (vgrid[j + 1] - vgrid[j])
                    cum += (means[best_arm] - means[a]) * (1.0 + (1.0 - q_hi) * w_hi
                                                           - (1.0 - q_lo) * w_lo)
            # ---- environment ----
            r = 1 if rng.random() < means[a] else 0
            if binary:
                qa = qtab[int(s), r]
                nxt = float(r)
            else:
                nxt = (1.0 - theta) * s + theta * r
                qa = log_curve(nxt, c6) if curve_kind == CURVE_LOG else np.interp(nxt, cx, cy)
            done = rng.random() < qa
            # ---- learner update ----
            counts[a] += 1
            sums[a] += r
            cache_ok[0, a] = False
            cache_ok[1, a] = False
            fresh = a
            t += 1
            if kind == Q_EPS or kind == Q_UCB:
                si = int(s)
                qn[si, a] += 1
                n = qn[si, a]
                if kind == Q_EPS:
                    alpha = 1.0 / n
                else:
                    alpha = (fp[P_H] + 1.0) / (fp[P_H] + n)
                target = float(r)
                if not done:
                    ns = int(nxt)
                    nmax = qv[ns, 0]
                    for i in range(1, M):
                        nmax = max(nmax, qv[ns, i])
                    target += nmax
                qv[si, a] = (1.0 - alpha) * qv[si, a] + alpha * target
            ep_reward += r
            h += 1
            total_steps += 1
            if done:
                break
            s = nxt
        if direct:
            # genie episode from the same initial state, always pulling the best arm
            s = s_first
            genie = 0.0
            g = 0
            while g < cap:
                r = 1 if rng.random() < means[best_arm] else 0
                if binary:
                    qa = qtab[int(s), r]
                    nxt = float(r)
                else:
                    nxt = (1.0 - theta) * s + theta * r
                    qa = log_curve(nxt, c6) if curve_kind == CURVE_LOG else np.interp(nxt, cx, cy)
                genie += r
                g += 1
                if rng.random() < qa:
                    break
                s = nxt
            if g >= cap:
                truncated += 1
            cum += genie - ep_reward
        out[k] = cum
    return truncated, total_steps
