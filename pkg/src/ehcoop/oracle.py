"""Exhaustive reference solver for short horizons.

Independent cross-check for the main solver on instances of up to three
slots.  The primary transmitter's free choices (direct power and
transferred energy per slot) are enumerated on a uniform lattice inside
the cumulative-energy polytope, with the final slot's direct power
absorbing any unspent budget; spending the full budget is never worse
when gains are positive.  For each lattice point the secondary side is
solved exactly: a weight on the secondary link's rate is bisected until
the rate floor holds, and every weighted subproblem is a two-link
water-fill inside the battery band, handled by enumerating which prefix
constraints are tight (at most nine patterns for three slots) and
computing each segment's water level in closed form.  The winning
lattice point is then re-searched once on a 10x finer local grid.

The returned objective is attained by the returned policy, so it is a
certified lower bound on the true optimum; the gap is dominated by the
lattice resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .model import (ChannelRealization, DomainError, HarvestRealization,
                    PowerPolicy, ScenarioConfig, ShapeError)

__all__ = ["GridBudgetError", "OracleResult", "brute_force_solve"]

_BIG = 1e300
_CHUNKS = 256
_MAX_POINTS = 100_000_000
_SOFT_POINTS = 40_000_000


class GridBudgetError(RuntimeError):
    """Raised when the requested lattice would exceed the point budget."""


@dataclass(eq=False)
class OracleResult:
    """Best lattice policy found by exhaustive search.

    objective is the primary cooperative sum rate (nats over the horizon)
    attained by policy; grid_step is the coarse lattice spacing in watts
    (the returned policy lies on a 10x finer local lattice).  feasible is
    False when no lattice point satisfies every constraint, in which case
    the policy is all zeros and the objective is -inf.
    """

    policy: PowerPolicy
    objective: float
    grid_step: float
    feasible: bool


@njit(cache=True)
def _seg_level(A, Cw, wr, s, e, budget, bp, w):
    """Water level t solving sum_i (t-A_i)^+ + wr*(t-Cw_i)^+ = budget.

    Slots s..e inclusive; entries at _BIG are absent links.  The spend is
    piecewise linear and increasing in t, so the level follows from one
    walk over the sorted breakpoints.
    """
    nb = 0
    for i in range(s, e + 1):
        if A[i] < _BIG:
            bp[nb] = A[i]
            w[nb] = 1.0
            nb += 1
        if Cw[i] < _BIG:
            bp[nb] = Cw[i]
            w[nb] = wr
            nb += 1
    if nb == 0:
        return _BIG
    for j in range(1, nb):
        bj = bp[j]
        wj = w[j]
        k = j - 1
        while k >= 0 and bp[k] > bj:
            bp[k + 1] = bp[k]
            w[k + 1] = w[k]
            k -= 1
        bp[k + 1] = bj
        w[k + 1] = wj
    if budget <= 0.0:
        return bp[0]
    tw = 0.0
    ts = 0.0
    for j in range(nb):
        tw += w[j]
        ts += w[j] * bp[j]
        if tw <= 0.0:
            continue
        t = (budget + ts) / tw
        if j + 1 >= nb or t <= bp[j + 1]:
            return t
    return bp[nb - 1]


@njit(cache=True)
def _pat_eval(n, pat, A, Cw, wr, up, lo, tol_b, tol_s, tseg, q, r, bp, w):
    """Evaluate one tightness pattern of the prefix constraints.

    pat encodes, base 3, the state of each interior boundary: 0 free,
    1 pinned at the arrival ceiling, 2 pinned at the battery floor.  The
    final boundary is always pinned at the total arrival.  Returns 0 when
    the fill is KKT-consistent, 1 when it is feasible but the segment
    levels are mis-ordered (degenerate ties), 2 when invalid.
    """
    left = 0.0
    start = 0
    prev_t = 0.0
    prev_zero = False
    first = True
    signs_ok = True
    for k in range(n):
        if k == n - 1:
            pinv = up[n - 1]
        else:
            st = (pat // 3 ** k) % 3
            if st == 1:
                pinv = up[k]
            elif st == 2:
                pinv = lo[k]
            else:
                continue
        budget = pinv - left
        if budget < -tol_b:
            return 2
        if budget < 0.0:
            budget = 0.0
        t = _seg_level(A, Cw, wr, start, k, budget, bp, w)
        for i in range(start, k + 1):
            tseg[i] = t
        zero = budget <= tol_b
        if not first:
            # a ceiling pin lets the level only rise afterwards, a floor
            # pin only drop; zero-budget segments have a free level
            bstate = (pat // 3 ** (start - 1)) % 3
            if bstate == 1:
                if not (zero or prev_t <= t * (1.0 + 1e-9) + 1e-12):
                    signs_ok = False
            else:
                if not (prev_zero or t <= prev_t * (1.0 + 1e-9) + 1e-12):
                    signs_ok = False
        prev_t = t
        prev_zero = zero
        first = False
        left = pinv
        start = k + 1
    s = 0.0
    for i in range(n):
        t = tseg[i]
        qi = 0.0
        ri = 0.0
        if A[i] < _BIG and t > A[i]:
            qi = t - A[i]
        if Cw[i] < _BIG and t > Cw[i]:
            ri = wr * (t - Cw[i])
        q[i] = qi
        r[i] = ri
        s += qi + ri
        if i < n - 1 and (s > up[i] + tol_s or s < lo[i] - tol_s):
            return 2
    if abs(s - up[n - 1]) > tol_s:
        return 2
    return 0 if signs_ok else 1


@njit(cache=True)
def _pat_solve(n, A, Cw, wr, up, lo, tol_b, tol_s, tseg, q, r, bq, br, bp, w):
    """Exact weighted two-link fill inside the battery band; fills q, r."""
    npat = 3 ** (n - 1)
    have_fb = False
    for pat in range(npat):
        code = _pat_eval(n, pat, A, Cw, wr, up, lo, tol_b, tol_s,
                         tseg, q, r, bp, w)
        if code == 0:
            return True
        if code == 1 and not have_fb:
            for i in range(n):
                bq[i] = q[i]
                br[i] = r[i]
            have_fb = True
    if have_fb:
        for i in range(n):
            q[i] = bq[i]
            r[i] = br[i]
        return True
    return False


@njit(cache=True)
def _rs_at(n, hss, lam, A, Cw, up, lo, tol_b, tol_s, tseg, q, r, bq, br, bp, w):
    """Secondary sum rate of the weighted fill at weight lam (fills q, r)."""
    for i in range(n):
        Cw[i] = (1.0 / hss[i]) / lam if hss[i] > 0.0 else _BIG
    if not _pat_solve(n, A, Cw, lam, up, lo, tol_b, tol_s,
                      tseg, q, r, bq, br, bp, w):
        return -1.0
    rs = 0.0
    for i in range(n):
        rs += np.log1p(hss[i] * r[i])
    return rs


@njit(cache=True)
def _eval_pd(n, hsp, hss, a, rs_need, boundary, rfill, lam_prev,
             A, Cw, up, lo, tol_b, tol_s, tseg, q, r, bq, br, bp, w):
    """Best secondary-side allocation for fixed PT choices.

    The tube (up, lo) and the floor reachability verdict are precomputed
    per transfer vector; boundary marks floors only met by the
    secondary-only fill rfill.  Returns (objective, weight) with the
    allocation in q and r; the weight seeds the next candidate's search.
    """
    if boundary:
        obj = 0.0
        for i in range(n):
            q[i] = 0.0
            r[i] = rfill[i]
            obj += np.log(a[i])
        return obj, lam_prev
    for i in range(n):
        A[i] = a[i] / hsp[i] if hsp[i] > 0.0 else _BIG
    if rs_need <= 0.0:
        for i in range(n):
            Cw[i] = _BIG
        if not _pat_solve(n, A, Cw, 0.0, up, lo, tol_b, tol_s,
                          tseg, q, r, bq, br, bp, w):
            return -np.inf, lam_prev
        obj = 0.0
        for i in range(n):
            obj += np.log(a[i] + hsp[i] * q[i])
        return obj, lam_prev
    # root-find the rate weight making the floor tight, staying on the
    # feasible side; false position with the Illinois cut, warm-started
    # from the previous candidate
    tol_rs = 1e-10 * (1.0 + rs_need)
    llo = 0.0
    flo = -rs_need
    lhi = -1.0
    fhi = 0.0
    lam0 = lam_prev if lam_prev > 0.0 else 1.0
    f0 = _rs_at(n, hss, lam0, A, Cw, up, lo, tol_b, tol_s,
                tseg, q, r, bq, br, bp, w) - rs_need
    at_hi = False
    if f0 >= 0.0:
        lhi = lam0
        fhi = f0
        at_hi = True
    else:
        llo = lam0
        flo = f0
        lam = lam0
        for _ in range(80):
            lam *= 4.0
            f = _rs_at(n, hss, lam, A, Cw, up, lo, tol_b, tol_s,
                       tseg, q, r, bq, br, bp, w) - rs_need
            if f >= 0.0:
                lhi = lam
                fhi = f
                at_hi = True
                break
            llo = lam
            flo = f
            if lam > 1e15:
                break
        if lhi < 0.0:
            # numerically at the reachability edge: hand back the
            # secondary-only fill, feasible by the per-transfer check
            obj = 0.0
            for i in range(n):
                q[i] = 0.0
                r[i] = rfill[i]
                obj += np.log(a[i])
            return obj, lam_prev
    side = 0
    if not (at_hi and fhi <= tol_rs):
        for _ in range(60):
            if lhi - llo <= 1e-11 * lhi:
                break
            denom = fhi - flo
            lam = 0.5 * (llo + lhi)
            if denom > 0.0:
                cand = (llo * fhi - lhi * flo) / denom
                if llo < cand < lhi:
                    lam = cand
            f = _rs_at(n, hss, lam, A, Cw, up, lo, tol_b, tol_s,
                       tseg, q, r, bq, br, bp, w) - rs_need
            if f >= 0.0:
                lhi = lam
                fhi = f
                at_hi = True
                if f <= tol_rs:
                    break
                if side == 1:
                    flo *= 0.5
                side = 1
            else:
                llo = lam
                flo = f
                at_hi = False
                if side == -1:
                    fhi *= 0.5
                side = -1
    if not at_hi:
        _rs_at(n, hss, lhi, A, Cw, up, lo, tol_b, tol_s,
               tseg, q, r, bq, br, bp, w)
    obj = 0.0
    for i in range(n):
        obj += np.log(a[i] + hsp[i] * q[i])
    return obj, lhi


@njit(cache=True, parallel=True)
def _scan(n, hp, hsp, hss, es, cum_ep, alpha, bmax, rs_need,
          ax_lo, ax_step, ax_size, ax_hi, out_obj, out_idx, out_pol):
    """Evaluate every lattice point; per-chunk argmax for determinism.

    Axes 0..1 are the first n-1 direct powers (fastest-varying), axes
    2..4 the transfers; unused axes have size one and the last direct
    power absorbs the remaining budget.  Transfers change slowest so the
    battery tube and the floor-reachability verdict are computed once per
    transfer vector.  Work is split into a fixed number of contiguous
    flat-index chunks so the winner is independent of thread count.
    """
    total = np.int64(1)
    for j in range(5):
        total *= ax_size[j]
    nchunk = out_obj.shape[0]
    chunk = (total + nchunk - 1) // nchunk
    total_ep = cum_ep[n - 1]
    tol = 1e-9 * (1.0 + max(total_ep, bmax))
    for c in prange(nchunk):
        delta = np.zeros(3)
        pd = np.zeros(3)
        a = np.empty(3)
        A = np.empty(3)
        Cw = np.empty(3)
        up = np.empty(3)
        lo = np.empty(3)
        tseg = np.empty(3)
        q = np.empty(3)
        r = np.empty(3)
        bq = np.empty(3)
        br = np.empty(3)
        rfill = np.zeros(3)
        bp = np.empty(6)
        w = np.empty(6)
        best = -np.inf
        bidx = np.int64(-1)
        # per-transfer cache: -2 unset, -1 battery-infeasible,
        # 0 floor unreachable, 1 floor only at the ceiling, 2 interior
        cd0 = -1.0
        cd1 = -1.0
        cd2 = -1.0
        cstate = -2
        tol_b = 0.0
        tol_s = 0.0
        lam_prev = 1.0
        f0 = c * chunk
        f1 = min(total, f0 + chunk)
        for f in range(f0, f1):
            rem = f
            for j in range(5):
                cj = rem % ax_size[j]
                rem //= ax_size[j]
                v = ax_lo[j] + cj * ax_step[j]
                if v < 0.0:
                    v = 0.0
                if v > ax_hi[j]:
                    v = ax_hi[j]
                if j < 2:
                    pd[j] = v
                else:
                    delta[j - 2] = v
            if cstate == -2 or delta[0] != cd0 or delta[1] != cd1 \
                    or delta[2] != cd2:
                cd0 = delta[0]
                cd1 = delta[1]
                cd2 = delta[2]
                cstate = 2 if rs_need <= 0.0 else -2
                s = 0.0
                for i in range(n):
                    if es[i] + alpha * delta[i] > bmax + tol:
                        cstate = -1
                        break
                    s += es[i] + alpha * delta[i]
                    up[i] = s
                if cstate != -1:
                    for k in range(n - 1):
                        lo[k] = up[k + 1] - bmax
                    lo[n - 1] = up[n - 1]
                    scale = 1.0 + up[n - 1]
                    tol_b = 1e-9 * scale
                    tol_s = 1e-8 * scale
                    if rs_need > 0.0:
                        # ceiling on the secondary rate: everything on own data
                        for i in range(n):
                            A[i] = _BIG
                        rmax = _rs_at(n, hss, 1.0, A, Cw, up, lo, tol_b, tol_s,
                                      tseg, q, r, bq, br, bp, w)
                        if rmax < rs_need - 1e-11:
                            cstate = 0
                        else:
                            for i in range(n):
                                rfill[i] = r[i]
                            cstate = 1 if rmax <= rs_need + 1e-11 else 2
            if cstate < 1:
                continue
            cum = 0.0
            ok = True
            for i in range(n - 1):
                cum += pd[i] + delta[i]
                if cum > cum_ep[i] + tol:
                    ok = False
                    break
            if not ok:
                continue
            cum += delta[n - 1]
            pl = total_ep - cum
            if pl < -tol:
                continue
            if pl < 0.0:
                pl = 0.0
            pd[n - 1] = pl
            for i in range(n):
                a[i] = 1.0 + hp[i] * pd[i]
            obj, lam_prev = _eval_pd(n, hsp, hss, a, rs_need, cstate == 1,
                                     rfill, lam_prev, A, Cw, up, lo,
                                     tol_b, tol_s, tseg, q, r, bq, br, bp, w)
            if obj > best:
                best = obj
                bidx = f
                for i in range(n):
                    out_pol[c, 0, i] = pd[i]
                    out_pol[c, 1, i] = delta[i]
                    out_pol[c, 2, i] = q[i]
                    out_pol[c, 3, i] = r[i]
        out_obj[c] = best
        out_idx[c] = bidx


def _run_scan(n, ch, hv, cfg, rs_need, ax_lo, ax_step, ax_size, ax_hi):
    out_obj = np.full(_CHUNKS, -np.inf)
    out_idx = np.full(_CHUNKS, -1, dtype=np.int64)
    out_pol = np.zeros((_CHUNKS, 4, 3))
    _scan(n, ch.h_p, ch.h_sp, ch.h_ss, hv.e_s, np.cumsum(hv.e_p),
          cfg.alpha, cfg.b_max, rs_need,
          ax_lo, ax_step, ax_size, ax_hi, out_obj, out_idx, out_pol)
    best_c = -1
    for c in range(_CHUNKS):
        if out_idx[c] >= 0 and (best_c < 0 or out_obj[c] > out_obj[best_c]):
            best_c = c
    if best_c < 0:
        return -np.inf, None
    return float(out_obj[best_c]), out_pol[best_c]


def brute_force_solve(cfg: ScenarioConfig,
                      channels: ChannelRealization,
                      harvests: HarvestRealization,
                      grid_step: float | None = None) -> OracleResult:
    """Exhaustive lattice search; exact only in the inner allocation.

    Supports horizons of at most three slots and strictly positive
    channel gains.  grid_step defaults to the total primary harvest over
    50; a lattice larger than 1e8 points raises GridBudgetError.
    """
    n = cfg.n_slots
    if n > 3:
        raise DomainError(f"exhaustive search supports at most 3 slots, got {n}")
    if channels.n_slots != n or harvests.n_slots != n:
        raise ShapeError("realization length does not match the config")
    if min(channels.h_p.min(), channels.h_sp.min(), channels.h_ss.min()) <= 0:
        raise DomainError("exhaustive search requires strictly positive gains")
    total_ep = float(np.sum(harvests.e_p))
    auto_step = grid_step is None
    if auto_step:
        grid_step = total_ep / 50.0 if total_ep > 0 else 1.0
    if not grid_step > 0:
        raise DomainError("grid_step must be positive")
    rs_need = n * cfg.rs_bar
    cum_ep = np.cumsum(harvests.e_p)

    caps = np.zeros(5)
    for i in range(n - 1):
        caps[i] = float(cum_ep[i])
    for i in range(n):
        room = max(0.0, (cfg.b_max - float(harvests.e_s[i])) / cfg.alpha)
        caps[2 + i] = min(float(cum_ep[i]), room)

    def axes(lo, hi, step):
        # one point past the last full step, clamped back to the cap, so
        # axis endpoints are always candidates
        ax_lo = np.zeros(5)
        ax_step = np.full(5, 1.0)
        ax_size = np.ones(5, dtype=np.int64)
        ax_hi = np.asarray(hi, dtype=float).copy()
        for j in range(5):
            ax_lo[j] = lo[j]
            if hi[j] <= lo[j]:
                ax_hi[j] = lo[j]
                continue
            ax_step[j] = step
            ax_size[j] = np.int64((hi[j] - lo[j]) / step + 1e-9) + 2
        return ax_lo, ax_step, ax_size, ax_hi

    def box_of(ax_size):
        out = 1
        for s in ax_size:
            out *= int(s)
        return out

    ax_lo, ax_step, ax_size, ax_hi = axes(np.zeros(5), caps, grid_step)
    if auto_step:
        # keep the default lattice within a soft budget: all axis caps can
        # equal the total harvest, blowing the box up on short totals
        while box_of(ax_size) > _SOFT_POINTS:
            grid_step *= 1.3
            ax_lo, ax_step, ax_size, ax_hi = axes(np.zeros(5), caps, grid_step)
    box = box_of(ax_size)
    if box > _MAX_POINTS:
        raise GridBudgetError(
            f"lattice of {box:.3e} points exceeds the {_MAX_POINTS:.0e} budget; "
            f"increase grid_step")
    obj_c, pol_c = _run_scan(n, channels, harvests, cfg, rs_need,
                             ax_lo, ax_step, ax_size, ax_hi)
    if pol_c is None:
        return OracleResult(policy=PowerPolicy.zeros(n), objective=-np.inf,
                            grid_step=float(grid_step), feasible=False)

    # one local refinement at a tenth of the step around the winner
    center = np.zeros(5)
    center[:2] = pol_c[0][:2]
    center[2:] = pol_c[1]
    lo_r = np.maximum(0.0, center - grid_step)
    hi_r = np.minimum(caps, center + grid_step)
    ax_lo, ax_step, ax_size, ax_hi = axes(lo_r, hi_r, grid_step / 10.0)
    obj_r, pol_r = _run_scan(n, channels, harvests, cfg, rs_need,
                             ax_lo, ax_step, ax_size, ax_hi)
    if pol_r is not None and obj_r > obj_c:
        obj_c, pol_c = obj_r, pol_r

    policy = PowerPolicy(p_d=pol_c[0][:n].copy(), delta_r=pol_c[1][:n].copy(),
                         p_sp=pol_c[2][:n].copy(), p_ss=pol_c[3][:n].copy())
    return OracleResult(policy=policy, objective=obj_c,
                        grid_step=float(grid_step), feasible=True)
