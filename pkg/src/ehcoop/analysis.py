"""Structural audits and Monte Carlo figure data.

The audit checks a converged cooperative policy against the structural
properties the optimum must have: a tight secondary-rate floor, both
energy budgets exhausted at the horizon, no transfer-and-relay in slots
where the direct link is the stronger one, and no direct power in slots
where relaying (after transfer losses) is stronger while the battery
still has room.

The Monte Carlo helpers sample paired realizations from a shared master
seed, so curves produced for different modes, floors or capacities are
comparable point by point.  Aggregation runs in realization order no
matter how the work is scheduled, keeping batch results bit-identical
across worker counts.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .model import (ConfigError, ScenarioConfig, battery_levels, child_rng,
                    sample_realization)
from .optimizer import SolveReport, solve

__all__ = ["PropositionAudit", "SweepResult", "battery_sweep",
           "check_propositions", "cooperation_probability", "rate_region"]


@dataclass(eq=False)
class PropositionAudit:
    """Structural optimality checks on a solved policy.

    prop1_gap: distance of the secondary sum rate from its floor, nats
    prop2_gap: primary energy left unspent at the horizon, joules
    prop3_gap: secondary energy (own plus transferred-in) left unspent
    prop4_violations: slots that transfer and relay although the direct
        link is the stronger one
    prop5_violations: slots with direct power although relaying beats it
        even after transfer losses and the battery has room
    applicable: False when the solve did not converge; the audit then
        makes no claim
    tol: threshold the gaps are judged against and the slot lists were
        computed with
    """

    prop1_gap: float
    prop2_gap: float
    prop3_gap: float
    prop4_violations: list
    prop5_violations: list
    applicable: bool
    tol: float

    @property
    def ok(self) -> bool:
        if not self.applicable:
            return True
        return (self.prop1_gap <= self.tol
                and self.prop2_gap <= self.tol
                and self.prop3_gap <= self.tol
                and not self.prop4_violations
                and not self.prop5_violations)


def check_propositions(report: SolveReport, cfg: ScenarioConfig,
                       tol: float = 1e-3) -> PropositionAudit:
    """Audit a solve report; presumes the full cooperative problem."""
    pol, ch, hv = report.policy, report.channels, report.harvests
    n = cfg.n_slots
    applicable = bool(report.converged and report.iterations > 0)
    p1 = abs(float(np.sum(report.rates.r_s_slots)) - n * cfg.rs_bar)
    p2 = abs(float(np.sum(pol.p_d + pol.delta_r)) - float(np.sum(hv.e_p)))
    p3 = abs(float(np.sum(pol.p_sp + pol.p_ss))
             - float(np.sum(hv.e_s + cfg.alpha * pol.delta_r)))
    m4 = (ch.h_p > ch.h_sp) & (np.minimum(pol.delta_r, pol.p_sp) > tol)
    lev = battery_levels(cfg, hv, pol)
    m5 = ((ch.h_p < cfg.alpha * ch.h_sp) & (lev < cfg.b_max - tol)
          & (pol.p_d > tol))
    return PropositionAudit(
        prop1_gap=p1, prop2_gap=p2, prop3_gap=p3,
        prop4_violations=[int(i) for i in np.nonzero(m4)[0]],
        prop5_violations=[int(i) for i in np.nonzero(m5)[0]],
        applicable=applicable, tol=tol)


def _coop(report: SolveReport) -> bool:
    return bool(report.iterations > 0 and report.converged
                and report.cooperation_successful)


def _eval_one(args):
    """One realization end to end; pure function of (cfg, index, seed)."""
    cfg, idx, master_seed, modes = args
    ch, hv = sample_realization(cfg, child_rng(master_seed, idx))
    out = {}
    base = None
    for m in modes:
        rep = solve(cfg, ch, hv, energy_cooperation=(m == "joint"))
        out[m] = (_coop(rep), float(rep.effective_primary_avg_rate()))
        base = rep.rates.r_p_bar
    out["nocoop"] = float(base)
    return idx, out


def _run_batch(cfg, realizations, modes, master_seed, workers):
    if realizations < 1:
        raise ConfigError(f"realizations must be >= 1, got {realizations}")
    args = [(cfg, i, master_seed, modes) for i in range(realizations)]
    if workers and workers > 1:
        chunk = max(1, realizations // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_eval_one, args, chunksize=chunk))
    else:
        results = [_eval_one(a) for a in args]
    results.sort(key=lambda t: t[0])
    return [row for _, row in results]


def _check_mode(mode: str):
    if mode not in ("joint", "info"):
        raise ConfigError(f"mode must be 'joint' or 'info', got {mode!r}")


def cooperation_probability(cfg: ScenarioConfig, realizations: int,
                            mode: str = "joint", master_seed: int = 0,
                            workers: int = 1) -> float:
    """Fraction of sampled realizations in which cooperation goes ahead.

    A realization counts when the solve converges and the cooperative
    policy delivers at least the no-cooperation benchmark rate.
    """
    _check_mode(mode)
    rows = _run_batch(cfg, realizations, (mode,), master_seed, workers)
    return sum(1 for row in rows if row[mode][0]) / realizations


def rate_region(cfg: ScenarioConfig, channels, harvests, rs_grid,
                mode: str = "joint") -> np.ndarray:
    """Delivered primary rate of one realization versus the secondary floor.

    Points where cooperation fails record the no-cooperation benchmark
    rate, so curves flatten out beyond the cutoff floor.
    """
    _check_mode(mode)
    rates = np.empty(len(rs_grid))
    for j, rs in enumerate(rs_grid):
        c = replace(cfg, rs_bar=float(rs))
        rep = solve(c, channels, harvests, energy_cooperation=(mode == "joint"))
        rates[j] = rep.effective_primary_avg_rate()
    return rates


@dataclass(eq=False)
class SweepResult:
    """Mean delivered primary rate versus battery capacity.

    Rates are averages of the per-realization delivered rate (the
    cooperative rate when cooperation goes ahead, the benchmark rate
    otherwise); coop_prob is the cooperating fraction in joint mode.
    """

    grid: np.ndarray
    rate_joint: np.ndarray
    rate_info: np.ndarray
    rate_nocoop: np.ndarray
    coop_prob: np.ndarray
    realizations: int
    master_seed: int


def battery_sweep(cfg: ScenarioConfig, bmax_grid, realizations: int,
                  master_seed: int = 0, workers: int = 1) -> SweepResult:
    """Sweep the battery capacity with paired realizations per point."""
    grid = np.asarray(bmax_grid, dtype=float)
    rj = np.empty(grid.size)
    ri = np.empty(grid.size)
    rn = np.empty(grid.size)
    cp = np.empty(grid.size)
    for g, b in enumerate(grid):
        c = replace(cfg, b_max=float(b))
        rows = _run_batch(c, realizations, ("joint", "info"),
                          master_seed, workers)
        rj[g] = sum(row["joint"][1] for row in rows) / realizations
        ri[g] = sum(row["info"][1] for row in rows) / realizations
        rn[g] = sum(row["nocoop"] for row in rows) / realizations
        cp[g] = sum(1 for row in rows if row["joint"][0]) / realizations
    return SweepResult(grid=grid, rate_joint=rj, rate_info=ri, rate_nocoop=rn,
                       coop_prob=cp, realizations=realizations,
                       master_seed=master_seed)
