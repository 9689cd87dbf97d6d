"""No-cooperation benchmark: directional water-filling for the PT alone.

With harvested energy only usable causally (energy spent through slot k
cannot exceed energy harvested through slot k), the rate-optimal power
schedule is piecewise-constant water-filling: find the prefix whose budget
forces the lowest water level, fill it at that single level, then recurse
on the remaining slots.  Water levels are non-decreasing over time and the
full budget is spent by the final slot.

The average rate returned here is the floor the primary user insists on
when deciding whether cooperation is worth it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DomainError, ShapeError

__all__ = ["BaselineResult", "solve_no_coop", "max_rate_upper_bound"]


@dataclass(eq=False)
class BaselineResult:
    """Optimal no-cooperation schedule.

    p_d_prime:    PT power per slot
    water_levels: per-slot water level; equals p + 1/h on powered slots
    r_p_bar:      average rate over the horizon, nats per channel use
    """

    p_d_prime: np.ndarray
    water_levels: np.ndarray
    r_p_bar: float


def _fill_level(inv: np.ndarray, budget: float) -> float:
    """Water level that spends `budget` over slots with 1/gain `inv`.

    Exact breakpoint walk on the piecewise-linear supply curve.  Returns
    inf when no slot has a finite inverse gain and the budget is positive.
    """
    finite = inv[np.isfinite(inv)]
    if finite.size == 0:
        return np.inf if budget > 0 else float(np.min(inv, initial=np.inf))
    order = np.sort(finite)
    csum = np.cumsum(order)
    m = np.arange(1, order.size + 1)
    levels = (budget + csum) / m
    # valid once the level clears the m-th breakpoint but not the next
    nxt = np.append(order[1:], np.inf)
    ok = (levels >= order - 1e-12) & (levels <= nxt + 1e-12)
    idx = int(np.argmax(ok)) if ok.any() else order.size - 1
    return float(levels[idx])


def solve_no_coop(h, e) -> BaselineResult:
    """Maximize the PT sum rate under cumulative energy constraints.

    Parameters
    ----------
    h : array
        Normalized channel gains per slot.
    e : array
        Harvested energy per slot, joules.
    """
    h = np.asarray(h, dtype=float)
    e = np.asarray(e, dtype=float)
    if h.shape != e.shape or h.ndim != 1:
        raise ShapeError(f"h and e must be equal-length vectors, got {h.shape} and {e.shape}")
    if np.any(h < 0) or np.any(e < 0):
        raise DomainError("gains and harvests must be non-negative")
    n = h.size
    with np.errstate(divide="ignore"):
        inv = np.where(h > 0, 1.0 / np.where(h > 0, h, 1.0), np.inf)
    cum_e = np.cumsum(e)
    p = np.zeros(n)
    levels = np.full(n, np.inf)
    start = 0
    base = 0.0
    while start < n:
        best_k = -1
        best_level = np.inf
        for k in range(start, n):
            lvl = _fill_level(inv[start:k + 1], cum_e[k] - base)
            if lvl < best_level - 1e-15:
                best_level = lvl
                best_k = k
        if best_k < 0:
            break  # no usable gain left; remaining slots stay silent
        seg = slice(start, best_k + 1)
        p[seg] = np.maximum(best_level - inv[seg], 0.0)
        levels[seg] = best_level
        base = cum_e[best_k]
        start = best_k + 1
    # canonical dual levels: clip empty-epoch levels down to later ones so
    # the reported sequence is non-decreasing
    levels = np.minimum.accumulate(levels[::-1])[::-1]
    rate = float(np.sum(np.log1p(h * p)))
    return BaselineResult(p_d_prime=p, water_levels=levels, r_p_bar=rate / n)


def max_rate_upper_bound(h, budgets_cum) -> float:
    """Largest sum rate of one link given cumulative energy budgets.

    Same water-filling problem as the benchmark but parameterized by an
    arbitrary cumulative budget curve; used for quick infeasibility
    screening before a full solve.
    """
    budgets_cum = np.asarray(budgets_cum, dtype=float)
    increments = np.diff(budgets_cum, prepend=0.0)
    res = solve_no_coop(h, np.maximum(increments, 0.0))
    return res.r_p_bar * len(budgets_cum)
