"""Compiled event loop for the birth/death/competition/mutation process.

The loop is an exact thinning scheme: with N individuals alive, candidate
events arrive at rate N * ub where ub = b_max + d_max_eff + c_max * N / K
bounds every individual's total rate; a uniformly chosen individual then
accepts a birth with probability b(x,u)/ub, a death with probability
(d(x,u) + d_shift + c0 * N / K)/ub, and otherwise the candidate is a phantom.
Between the moments an individual is looked at, its location performs
reflected Brownian motion; increments are folded into the domain in a single
draw, which has exactly the law of the substepped reflected Euler chain
because Gaussian increments compose and the fold map commutes with them in
distribution.

Positions are therefore advanced lazily (per particle, on demand), which
keeps every event O(1).  All randomness flows through numba's global stream,
seeded once per trajectory: identical seeds give bit-identical runs.
"""

import numpy as np
from numba import njit

# status codes returned by run_segment
ST_TIME = 0        # reached t_until
ST_EXTINCT = 1
ST_THRESHOLD = 2   # population-size or per-trait count threshold hit
ST_MUTATION = 3
ST_BUDGET = 4      # event budget exhausted (re-enter to continue)
ST_CAPACITY = 5    # particle/trait arrays full (grow and re-enter)
ST_MONOMORPHIC = 6


@njit(cache=True)
def seed_stream(seed):
    np.random.seed(seed)


@njit(cache=True, inline="always")
def _fold(x, lo, hi):
    span = hi - lo
    y = (x - lo) % (2.0 * span)
    if y > span:
        y = 2.0 * span - y
    return lo + y


@njit(cache=True, inline="always")
def _feval(code, par, grid, vals, x, u):
    if code == 0:
        return par[0]
    if code == 1:
        v = par[0] - par[1] * u * (x - u) ** 2
        return v if v > 0.0 else 0.0
    if code == 2:
        return par[0] + par[1] * x
    if code == 3:
        best = 0
        bd = abs(u - grid[0])
        for k in range(1, grid.shape[0]):
            dk = abs(u - grid[k])
            if dk < bd:
                bd = dk
                best = k
        return vals[best]
    if code == 4:
        n = grid.shape[0]
        if x <= grid[0]:
            return vals[0]
        if x >= grid[n - 1]:
            return vals[n - 1]
        lo, hi = 0, n - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if grid[mid] <= x:
                lo = mid
            else:
                hi = mid
        f = (x - grid[lo]) / (grid[hi] - grid[lo])
        return vals[lo] * (1.0 - f) + vals[hi] * f
    if code == 5:
        return par[0] + par[1] * u
    return 0.0


@njit(cache=True, inline="always")
def _sample_kernel(kcode, kpar, ktraits, kcumw, u, ulo, uhi):
    if kcode == 0:
        sig = kpar[0]
        for _ in range(1000000):
            w = u + sig * np.random.standard_normal()
            if ulo <= w <= uhi:
                return w
        return min(max(u, ulo), uhi)
    excl = kpar[0] > 0.0
    tol = kpar[1]
    for _ in range(1000000):
        r = np.random.random()
        j = 0
        while kcumw[j] < r and j < kcumw.shape[0] - 1:
            j += 1
        w = ktraits[j]
        if not excl or abs(w - u) > tol:
            return w
    return u


@njit(cache=True)
def sync_positions(xs, sq2m, tlast, n, t, xlo, xhi):
    """Bring every particle's location up to time t (consumes one normal
    draw per stale particle)."""
    for i in range(n):
        e = t - tlast[i]
        if e > 0.0:
            xs[i] = _fold(xs[i] + sq2m[i] * np.sqrt(e)
                          * np.random.standard_normal(), xlo, xhi)
            tlast[i] = t


@njit(cache=True)
def run_segment(xs, us, sq2m, tlast, tidx,
                utraits, ucounts,
                istate, fstate,
                xlo, xhi, ulo, uhi,
                bcode, bpar, bgrid, bvals,
                dcode, dpar, dgrid, dvals,
                pcode, ppar, pgrid, pvals,
                mcode, mpar, mgrid, mvals,
                kcode, kpar, ktraits, kcumw,
                c0, d_shift, q_K, K,
                b_max, d_max_eff, c_max,
                t_until, max_events,
                stop_on_mut, stop_n_ge,
                stop_slot, stop_slot_count,
                watch_a, watch_b,
                log_on,
                ev_t, ev_kind, ev_parent, ev_x, ev_u, ev_child):
    """Advance the process until t_until or the first satisfied stop rule.

    istate = [N, n_traits, peak_N]; fstate = [t].  Returns
    (status, n_events, n_logged).
    """
    N = istate[0]
    ntraits = istate[1]
    peak = istate[2]
    t = fstate[0]
    cap = xs.shape[0]
    tcap = utraits.shape[0]
    n_ev = 0
    n_log = 0
    status = ST_TIME
    ub = b_max + d_max_eff + c_max * N / K

    while True:
        if N == 0:
            status = ST_EXTINCT
            break
        if N >= cap:
            status = ST_CAPACITY
            break
        if n_ev >= max_events:
            status = ST_BUDGET
            break
        t_cand = t + np.random.exponential(1.0 / (N * ub))
        if t_cand >= t_until:
            t = t_until
            status = ST_TIME
            break
        t = t_cand
        n_ev += 1
        i = np.random.randint(N)
        e = t - tlast[i]
        if e > 0.0:
            xs[i] = _fold(xs[i] + sq2m[i] * np.sqrt(e)
                          * np.random.standard_normal(), xlo, xhi)
            tlast[i] = t
        x = xs[i]
        u = us[i]
        r = np.random.random() * ub
        bi = _feval(bcode, bpar, bgrid, bvals, x, u)
        if r < bi:
            mutant = False
            if q_K > 0.0:
                pi = _feval(pcode, ppar, pgrid, pvals, x, u)
                if pi > 0.0 and np.random.random() < q_K * pi:
                    mutant = True
            if mutant:
                child_u = _sample_kernel(kcode, kpar, ktraits, kcumw,
                                         u, ulo, uhi)
                slot = -1
                for k in range(ntraits):
                    if utraits[k] == child_u:
                        slot = k
                        break
                if slot < 0:
                    if ntraits >= tcap:
                        status = ST_CAPACITY
                        break
                    utraits[ntraits] = child_u
                    ucounts[ntraits] = 0
                    slot = ntraits
                    ntraits += 1
            else:
                child_u = u
                slot = tidx[i]
            xs[N] = x
            us[N] = child_u
            sq2m[N] = np.sqrt(2.0 * _feval(mcode, mpar, mgrid, mvals,
                                           x, child_u))
            tlast[N] = t
            tidx[N] = slot
            ucounts[slot] += 1
            N += 1
            if N > peak:
                peak = N
            ub = b_max + d_max_eff + c_max * N / K
            if log_on:
                ev_t[n_log] = t
                ev_kind[n_log] = 1 if mutant else 0
                ev_parent[n_log] = i
                ev_x[n_log] = x
                ev_u[n_log] = u
                ev_child[n_log] = child_u
                n_log += 1
            if mutant and stop_on_mut:
                status = ST_MUTATION
                break
            if stop_n_ge > 0 and N >= stop_n_ge:
                status = ST_THRESHOLD
                break
            if stop_slot >= 0 and ucounts[stop_slot] >= stop_slot_count:
                status = ST_THRESHOLD
                break
        else:
            di = (_feval(dcode, dpar, dgrid, dvals, x, u) + d_shift
                  + c0 * N / K)
            if r < bi + di:
                if log_on:
                    ev_t[n_log] = t
                    ev_kind[n_log] = 2
                    ev_parent[n_log] = i
                    ev_x[n_log] = x
                    ev_u[n_log] = u
                    ev_child[n_log] = np.nan
                    n_log += 1
                slot = tidx[i]
                ucounts[slot] -= 1
                N -= 1
                xs[i] = xs[N]
                us[i] = us[N]
                sq2m[i] = sq2m[N]
                tlast[i] = tlast[N]
                tidx[i] = tidx[N]
                ub = b_max + d_max_eff + c_max * N / K
                if N == 0:
                    status = ST_EXTINCT
                    break
                if watch_a >= 0 and ucounts[watch_a] == 0:
                    status = ST_MONOMORPHIC
                    break
                if watch_b >= 0 and ucounts[watch_b] == 0:
                    status = ST_MONOMORPHIC
                    break
            # else: phantom candidate, nothing changes
        if n_log >= ev_t.shape[0] - 1 and log_on:
            status = ST_BUDGET
            break

    istate[0] = N
    istate[1] = ntraits
    istate[2] = peak
    fstate[0] = t
    return status, n_ev, n_log
