"""Compiled path kernels.

Random numbers come from a counter-based SplitMix64 stream: draw ``k`` of
path ``p`` is ``mix(key + (p * 2**32 + k) * GOLDEN)``.  Every path therefore
sees the same numbers whatever the thread count, and two runs that differ only
in the stopping rule share their paths up to the earlier stop (common random
numbers).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
S32 = np.uint64(32)
INV53 = 1.0 / 9007199254740992.0
TWO_PI = 2.0 * math.pi


@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


@njit(inline="always")
def _uniform(key, path, k):
    ctr = (np.uint64(path) << S32) | np.uint64(k)
    z = _mix(key + ctr * GOLDEN)
    return (float(z >> S11) + 0.5) * INV53


@njit(inline="always")
def _normal(key, path, k):
    u1 = _uniform(key, path, k)
    u2 = _uniform(key, path, k + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)


@njit(inline="always")
def _expo(key, path, k, rate):
    return -math.log(_uniform(key, path, k)) / rate


def mix_seed(seed: int) -> np.uint64:
    """Stream key for a seed; must reach the kernels as uint64 to keep integer arithmetic."""
    with np.errstate(over="ignore"):
        return np.uint64(_mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + GOLDEN))


@njit(inline="always")
def _g_eval(m, log_K, bx, bc, s_end, tail, v0, g0, phi):
    """Boundary g at maximum m; +inf below log K, inf everywhere when bx is empty."""
    if bx.shape[0] == 0:
        return math.inf
    u = m - log_K
    if u <= 0.0:
        return math.inf
    if m >= s_end:
        return tail
    v = math.log(u)
    if v < v0:
        return g0 + (v0 - v) / phi
    n = bx.shape[0]
    if v >= bx[n - 1]:
        v = bx[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if bx[mid] <= v:
            lo = mid
        else:
            hi = mid
    d = v - bx[lo]
    val = ((bc[0, lo] * d + bc[1, lo]) * d + bc[2, lo]) * d + bc[3, lo]
    return max(val, 0.0)


@njit(inline="always")
def _bumped(g, delta, floor):
    if delta == 0.0:
        return g
    gb = g + delta
    if delta < 0.0 and gb < floor:
        gb = floor
    return gb


@njit(inline="always")
def _payoff(m, eps, K, log_K):
    top = m if m < eps else eps
    val = K * math.expm1(top - log_K)
    return val if val > 0.0 else 0.0


@njit(parallel=True, cache=True)
def drawdown_diffusion(
    key, n, x0, s0, b, sigma, lam, alpha, q, K, log_K, eps, dt, horizon, bridge,
    bx, bc, s_end, tail, v0, g0, phi, delta, floor, forced, dd_cutoff, pay_survivors,
    out_pay, out_tau,
):
    """Drawdown rule for families with a Gaussian part, stepped on dt with exact jump times."""
    for p in prange(n):
        x = x0
        m = s0
        t = 0.0
        k = 0
        pay = 0.0
        tau = math.inf
        g = _bumped(_g_eval(m, log_K, bx, bc, s_end, tail, v0, g0, phi), delta, floor)
        if m > log_K and (m - x >= g or m >= forced):
            out_pay[p] = _payoff(m, eps, K, log_K)
            out_tau[p] = 0.0
            continue
        next_jump = math.inf
        if lam > 0.0:
            next_jump = _expo(key, p, k, lam)
            k += 1
        while True:
            if t >= horizon:
                if pay_survivors:
                    pay = _payoff(m, eps, K, log_K) * math.exp(-q * t)
                break
            h = dt
            if horizon - t < h:
                h = horizon - t
            jump_now = False
            if next_jump - t <= h:
                h = next_jump - t
                jump_now = True
            if h > 0.0:
                z = _normal(key, p, k)
                k += 2
                x1 = x + b * h + sigma * math.sqrt(h) * z
                if bridge:
                    uu = _uniform(key, p, k)
                    k += 1
                    dx = x1 - x
                    top = 0.5 * (x + x1 + math.sqrt(dx * dx - 2.0 * sigma * sigma * h * math.log(uu)))
                else:
                    top = x1 if x1 > x else x
                if top > m:
                    if top >= forced and m < forced:
                        tau = t + 0.5 * h
                        pay = _payoff(forced, eps, K, log_K) * math.exp(-q * tau)
                        break
                    m = top
                x = x1
                t += h
            if jump_now:
                t = next_jump
                x -= _expo(key, p, k, alpha)
                k += 1
                next_jump = t + _expo(key, p, k, lam)
                k += 1
            if m > log_K:
                g = _bumped(_g_eval(m, log_K, bx, bc, s_end, tail, v0, g0, phi), delta, floor)
                if m - x >= g:
                    tau = t
                    pay = _payoff(m, eps, K, log_K) * math.exp(-q * t)
                    break
            if m - x >= dd_cutoff:
                pay = _payoff(m, eps, K, log_K) * math.exp(-q * t)
                tau = math.inf
                break
        out_pay[p] = pay
        out_tau[p] = tau


@njit(parallel=True, cache=True)
def drawdown_bv(
    key, n, x0, s0, d, lam, alpha, q, K, log_K, eps, horizon,
    bx, bc, s_end, tail, v0, g0, phi, delta, floor, forced, dd_cutoff, pay_survivors,
    out_pay, out_tau,
):
    """Exact event-driven drawdown rule for drift minus compound Poisson.

    Between jumps the path rises linearly, so the drawdown can only grow at
    jump instants and the maximum reaches a level at a computable time.
    """
    for p in prange(n):
        x = x0
        m = s0
        t = 0.0
        k = 0
        pay = 0.0
        tau = math.inf
        g = _bumped(_g_eval(m, log_K, bx, bc, s_end, tail, v0, g0, phi), delta, floor)
        if m > log_K and (m - x >= g or m >= forced):
            out_pay[p] = _payoff(m, eps, K, log_K)
            out_tau[p] = 0.0
            continue
        while True:
            wait = _expo(key, p, k, lam)
            k += 1
            t_j = t + wait
            t_stop = t_j if t_j < horizon else horizon
            x_end = x + d * (t_stop - t)
            if x_end > m:
                if x_end >= forced and m < forced:
                    tau = t + (forced - x) / d
                    pay = _payoff(forced, eps, K, log_K) * math.exp(-q * tau)
                    break
                m = x_end
            if t_j >= horizon:
                t = horizon
                x = x_end
                if pay_survivors:
                    pay = _payoff(m, eps, K, log_K) * math.exp(-q * t)
                break
            t = t_j
            x = x_end - _expo(key, p, k, alpha)
            k += 1
            if m > log_K:
                g = _bumped(_g_eval(m, log_K, bx, bc, s_end, tail, v0, g0, phi), delta, floor)
                if m - x >= g:
                    tau = t
                    pay = _payoff(m, eps, K, log_K) * math.exp(-q * t)
                    break
            if m - x >= dd_cutoff:
                pay = _payoff(m, eps, K, log_K) * math.exp(-q * t)
                break
        out_pay[p] = pay
        out_tau[p] = tau


@njit(parallel=True, cache=True)
def two_sided_exit(key, n, x0, a, b_lvl, b, sigma, lam, alpha, q, dt, horizon, out_up, out_dn):
    """Exit from (a, b) before an independent Exp(q) clock.

    ``P(exit up before the clock) = E[e^{-q tau_b^+}; tau_b^+ < tau_a^-]`` and
    likewise for the lower side, so no exit time has to be located inside a
    step; bridge crossing probabilities decide whether a step crossed a level.
    """
    s2 = sigma * sigma
    for p in prange(n):
        x = x0
        t = 0.0
        k = 0
        clock = _expo(key, p, k, q) if q > 0.0 else math.inf
        k += 1
        end = clock if clock < horizon else horizon
        next_jump = math.inf
        if lam > 0.0:
            next_jump = _expo(key, p, k, lam)
            k += 1
        up = 0.0
        dn = 0.0
        if x >= b_lvl:
            out_up[p] = 1.0
            out_dn[p] = 0.0
            continue
        while t < end:
            h = dt
            if end - t < h:
                h = end - t
            jump_now = False
            if next_jump - t <= h:
                h = next_jump - t
                jump_now = True
            if h > 0.0:
                z = _normal(key, p, k)
                k += 2
                x1 = x + b * h + sigma * math.sqrt(h) * z
                u_up = _uniform(key, p, k)
                u_dn = _uniform(key, p, k + 1)
                u_tie = _uniform(key, p, k + 2)
                k += 3
                p_up = 1.0 if x1 >= b_lvl else math.exp(-2.0 * (b_lvl - x) * (b_lvl - x1) / (s2 * h))
                p_dn = 1.0 if x1 <= a else math.exp(-2.0 * (x - a) * (x1 - a) / (s2 * h))
                hit_up = u_up < p_up
                hit_dn = u_dn < p_dn
                if hit_up and hit_dn:
                    if u_tie * (p_up + p_dn) < p_up:
                        hit_dn = False
                    else:
                        hit_up = False
                if hit_up:
                    up = 1.0
                    break
                if hit_dn:
                    dn = 1.0
                    break
                x = x1
                t += h
            if jump_now:
                t = next_jump
                x -= _expo(key, p, k, alpha)
                k += 1
                next_jump = t + _expo(key, p, k, lam)
                k += 1
                if x <= a:
                    dn = 1.0
                    break
        out_up[p] = up
        out_dn[p] = dn


@njit(parallel=True, cache=True)
def two_sided_exit_bv(key, n, x0, a, b_lvl, d, lam, alpha, q, horizon, out_up, out_dn):
    for p in prange(n):
        x = x0
        t = 0.0
        k = 0
        clock = _expo(key, p, k, q) if q > 0.0 else math.inf
        k += 1
        end = clock if clock < horizon else horizon
        up = 0.0
        dn = 0.0
        if x >= b_lvl:
            out_up[p] = 1.0
            out_dn[p] = 0.0
            continue
        while True:
            t_j = t + _expo(key, p, k, lam)
            k += 1
            t_hit = t + (b_lvl - x) / d
            if t_hit <= t_j and t_hit <= end:
                up = 1.0
                break
            if t_j >= end:
                break
            x = x + d * (t_j - t) - _expo(key, p, k, alpha)
            k += 1
            t = t_j
            if x <= a:
                dn = 1.0
                break
        out_up[p] = up
        out_dn[p] = dn


@njit(parallel=True, cache=True)
def discounted_sup(key, n, x0, b, sigma, lam, alpha, q, dt, horizon, marks, out):
    """sup_{t <= T} exp(-q t + running max) at each mark T (marks ascending)."""
    nm = marks.shape[0]
    for p in prange(n):
        x = x0
        m = x0
        t = 0.0
        k = 0
        best = math.exp(x0)
        j = 0
        next_jump = math.inf
        if lam > 0.0:
            next_jump = _expo(key, p, k, lam)
            k += 1
        while j < nm:
            while j < nm and t >= marks[j]:
                out[p, j] = best
                j += 1
            if j >= nm:
                break
            h = dt
            if marks[j] - t < h:
                h = marks[j] - t
            jump_now = False
            if next_jump - t <= h:
                h = next_jump - t
                jump_now = True
            if h > 0.0:
                z = _normal(key, p, k)
                k += 2
                x1 = x + b * h + sigma * math.sqrt(h) * z
                uu = _uniform(key, p, k)
                k += 1
                dx = x1 - x
                top = 0.5 * (x + x1 + math.sqrt(dx * dx - 2.0 * sigma * sigma * h * math.log(uu)))
                if top > m:
                    m = top
                # the step maximum is attained no earlier than t
                val = math.exp(-q * t + m)
                if val > best:
                    best = val
                x = x1
                t += h
            if jump_now:
                t = next_jump
                x -= _expo(key, p, k, alpha)
                k += 1
                next_jump = t + _expo(key, p, k, lam)
                k += 1
