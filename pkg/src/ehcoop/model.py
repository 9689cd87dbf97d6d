"""System model for a cognitive radio link with energy cooperation.

A primary transmitter (PT) and a secondary transmitter (ST) both harvest
energy over a finite horizon of equal-length slots.  The ST relays the
primary message (maximal ratio combining at the primary receiver) in
exchange for spectrum access, and the PT may additionally transfer part of
its harvested energy to the ST over a wireless power link with efficiency
``alpha``.  All rates are in nats per channel use; channel gains are
normalized by the noise power so that a rate is ``log(1 + h * P)``.

This module holds the scenario configuration, per-realization channel and
harvest containers, power policies, rate evaluation and the constraint
residuals used by the solver and the audits.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "ConfigError",
    "ShapeError",
    "DomainError",
    "ScenarioConfig",
    "ChannelRealization",
    "HarvestRealization",
    "PowerPolicy",
    "RateSummary",
    "ConstraintResiduals",
    "dbm_to_watts",
    "normalize_gain",
    "sample_realization",
    "child_rng",
    "point_to_point_rate",
    "primary_coop_rate",
    "secondary_rate",
    "battery_levels",
    "constraint_residuals",
    "is_feasible",
]


class ConfigError(ValueError):
    """Raised for inconsistent or out-of-range scenario parameters."""


class ShapeError(ValueError):
    """Raised when vector lengths disagree with the slot count."""


class DomainError(ValueError):
    """Raised for negative powers, gains or harvests."""


def dbm_to_watts(dbm: float) -> float:
    """Convert a power in dBm to watts."""
    return 1e-3 * 10.0 ** (dbm / 10.0)


def normalize_gain(raw_gain, noise_power: float):
    """Divide raw power gains by the noise power.

    Rates downstream are computed as log(1 + h * P) with h the value
    returned here, so the noise level appears nowhere else.
    """
    if noise_power <= 0:
        raise ConfigError(f"noise_power must be positive, got {noise_power}")
    return np.asarray(raw_gain, dtype=float) / noise_power


@dataclass(frozen=True)
class ScenarioConfig:
    """Static scenario parameters shared by all realizations.

    Distances are in meters, energies in joules, ``noise_power`` in watts
    (converted from dBm at config load time).  ``alpha`` is the energy
    transfer efficiency of the PT-to-ST power link.  ``rs_bar`` is the
    required average secondary rate and ``d_pt_st`` is recorded for
    completeness but does not enter the rate model.
    """

    n_slots: int = 5
    theta_p: float = 0.5          # PT harvest probability per slot
    theta_s: float = 0.5          # ST harvest probability per slot
    e_p_amount: float = 7.0       # joules harvested by PT when it harvests
    e_s_amount: float = 1.0       # joules harvested by ST when it harvests
    b_max: float = 3.5            # ST battery capacity, joules
    alpha: float = 0.3            # energy transfer efficiency in (0, 1]
    noise_power: float = 1e-3     # watts (0 dBm)
    d_pp: float = 5.0             # PT -> primary receiver distance
    d_sp: float = 5.0             # ST -> primary receiver distance
    d_ss: float = 5.0             # ST -> secondary receiver distance
    d_pt_st: float = 0.5          # PT -> ST distance, recorded but unused
    rho: float = 2.7              # path loss exponent
    rs_bar: float = 0.5           # required average secondary rate, nats

    def __post_init__(self):
        if self.n_slots < 1:
            raise ConfigError(f"n_slots must be >= 1, got {self.n_slots}")
        for name in ("theta_p", "theta_s"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.noise_power <= 0:
            raise ConfigError("noise_power must be positive")
        for name in ("e_p_amount", "e_s_amount", "d_pp", "d_sp", "d_ss",
                     "d_pt_st", "rho"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        # b_max = 0 is a legitimate degenerate sweep point (ST cannot store).
        if self.b_max < 0:
            raise ConfigError("b_max must be non-negative")
        if self.rs_bar < 0:
            raise ConfigError("rs_bar must be non-negative")

    def mean_gains(self) -> tuple[float, float, float]:
        """Normalized mean channel gains (h_p, h_sp, h_ss) under path loss."""
        return (
            self.d_pp ** -self.rho / self.noise_power,
            self.d_sp ** -self.rho / self.noise_power,
            self.d_ss ** -self.rho / self.noise_power,
        )


def _as_slot_vector(x, n_slots: int, name: str, allow_negative=False):
    v = np.asarray(x, dtype=float)
    if v.shape != (n_slots,):
        raise ShapeError(f"{name} must have shape ({n_slots},), got {v.shape}")
    if not allow_negative and np.any(v < 0):
        raise DomainError(f"{name} must be non-negative")
    if not np.all(np.isfinite(v)):
        raise DomainError(f"{name} must be finite")
    return v


@dataclass(eq=False)
class ChannelRealization:
    """Normalized power gains per slot for the three links.

    h_p:  PT -> primary receiver
    h_sp: ST -> primary receiver (relaying)
    h_ss: ST -> secondary receiver
    """

    h_p: np.ndarray
    h_sp: np.ndarray
    h_ss: np.ndarray

    def __post_init__(self):
        n = len(np.asarray(self.h_p))
        self.h_p = _as_slot_vector(self.h_p, n, "h_p")
        self.h_sp = _as_slot_vector(self.h_sp, n, "h_sp")
        self.h_ss = _as_slot_vector(self.h_ss, n, "h_ss")

    @property
    def n_slots(self) -> int:
        return self.h_p.shape[0]


@dataclass(eq=False)
class HarvestRealization:
    """Energy arrivals per slot at the PT (e_p) and the ST (e_s), joules."""

    e_p: np.ndarray
    e_s: np.ndarray

    def __post_init__(self):
        n = len(np.asarray(self.e_p))
        self.e_p = _as_slot_vector(self.e_p, n, "e_p")
        self.e_s = _as_slot_vector(self.e_s, n, "e_s")

    @property
    def n_slots(self) -> int:
        return self.e_p.shape[0]


@dataclass(eq=False)
class PowerPolicy:
    """Transmit powers and energy transfers per slot.

    p_d:     PT power spent on its own message
    delta_r: PT energy handed to the ST power link (pre-efficiency)
    p_sp:    ST power spent relaying the primary message
    p_ss:    ST power spent on the secondary message
    """

    p_d: np.ndarray
    delta_r: np.ndarray
    p_sp: np.ndarray
    p_ss: np.ndarray

    def __post_init__(self):
        n = len(np.asarray(self.p_d))
        self.p_d = _as_slot_vector(self.p_d, n, "p_d")
        self.delta_r = _as_slot_vector(self.delta_r, n, "delta_r")
        self.p_sp = _as_slot_vector(self.p_sp, n, "p_sp")
        self.p_ss = _as_slot_vector(self.p_ss, n, "p_ss")

    @property
    def n_slots(self) -> int:
        return self.p_d.shape[0]

    @staticmethod
    def zeros(n_slots: int) -> "PowerPolicy":
        z = np.zeros(n_slots)
        return PowerPolicy(z.copy(), z.copy(), z.copy(), z.copy())


@dataclass(eq=False)
class RateSummary:
    """Per-slot and average rates achieved by a policy.

    r_p_bar is the no-cooperation benchmark average primary rate used as
    the cooperation floor.
    """

    r_pc_slots: np.ndarray
    r_s_slots: np.ndarray
    r_pc_avg: float
    r_s_avg: float
    r_p_bar: float


@dataclass(eq=False)
class ConstraintResiduals:
    """Signed constraint residuals; positive means violated.

    coop_rate and sec_rate are total-rate shortfalls over the horizon.
    pt_energy, st_energy and battery are cumulative vectors indexed by
    slot; battery_level is the ST stored energy at the start of each slot
    after arrivals, before consumption.
    """

    coop_rate: float
    sec_rate: float
    pt_energy: np.ndarray
    st_energy: np.ndarray
    battery: np.ndarray
    battery_level: np.ndarray

    def max_violation(self) -> float:
        """Largest residual across energy and secondary-rate constraints.

        The cooperation rate floor is deliberately excluded: it is checked
        after the solve to decide whether cooperation goes ahead.
        """
        return max(
            self.sec_rate,
            float(np.max(self.pt_energy)),
            float(np.max(self.st_energy)),
            float(np.max(self.battery)),
        )


def sample_realization(cfg: ScenarioConfig, rng: np.random.Generator):
    """Draw one channel/harvest realization.

    Power gains are exponential (Rayleigh fading) with mean d^-rho, then
    normalized by the noise power.  Harvests are Bernoulli: the full
    packet amount with the configured probability, else zero.

    Returns
    -------
    (ChannelRealization, HarvestRealization)
    """
    n = cfg.n_slots
    mean_p = cfg.d_pp ** -cfg.rho
    mean_sp = cfg.d_sp ** -cfg.rho
    mean_ss = cfg.d_ss ** -cfg.rho
    ch = ChannelRealization(
        h_p=normalize_gain(rng.exponential(mean_p, n), cfg.noise_power),
        h_sp=normalize_gain(rng.exponential(mean_sp, n), cfg.noise_power),
        h_ss=normalize_gain(rng.exponential(mean_ss, n), cfg.noise_power),
    )
    hv = HarvestRealization(
        e_p=cfg.e_p_amount * (rng.random(n) < cfg.theta_p),
        e_s=cfg.e_s_amount * (rng.random(n) < cfg.theta_s),
    )
    return ch, hv


def child_rng(master_seed: int, index: int) -> np.random.Generator:
    """Generator for realization `index`, independent of evaluation order.

    Every realization derives its stream from (master_seed, index) alone,
    so batch results do not depend on scheduling or worker count.
    """
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return np.random.default_rng(ss)


def point_to_point_rate(h, p):
    """Per-slot rate log(1 + h * p) of a single link, nats."""
    h = np.asarray(h, dtype=float)
    p = _as_slot_vector(p, h.shape[0], "p")
    return np.log1p(h * p)


def primary_coop_rate(channels: ChannelRealization, p_d, p_sp):
    """Per-slot primary rate with the ST relaying (MRC at the receiver)."""
    n = channels.n_slots
    p_d = _as_slot_vector(p_d, n, "p_d")
    p_sp = _as_slot_vector(p_sp, n, "p_sp")
    return np.log1p(channels.h_p * p_d + channels.h_sp * p_sp)


def secondary_rate(channels: ChannelRealization, p_ss):
    """Per-slot secondary rate."""
    p_ss = _as_slot_vector(p_ss, channels.n_slots, "p_ss")
    return np.log1p(channels.h_ss * p_ss)


def battery_levels(cfg: ScenarioConfig, harvests: HarvestRealization,
                   policy: PowerPolicy) -> np.ndarray:
    """ST stored energy at the start of each slot, after arrivals.

    level_k = sum_{i<=k} (e_s_i + alpha * delta_r_i)
            - sum_{i<=k-1} (p_sp_i + p_ss_i)
    """
    inflow = np.cumsum(harvests.e_s + cfg.alpha * policy.delta_r)
    spent = np.cumsum(policy.p_sp + policy.p_ss)
    spent_before = np.concatenate(([0.0], spent[:-1]))
    return inflow - spent_before


def constraint_residuals(cfg: ScenarioConfig, channels: ChannelRealization,
                         harvests: HarvestRealization, policy: PowerPolicy,
                         r_p_bar: float) -> ConstraintResiduals:
    """Evaluate every constraint of the cooperation problem for a policy.

    Positive entries mean the constraint is violated by that amount.
    """
    n = cfg.n_slots
    if channels.n_slots != n or harvests.n_slots != n or policy.n_slots != n:
        raise ShapeError("channels, harvests and policy must match n_slots")
    r_pc = primary_coop_rate(channels, policy.p_d, policy.p_sp)
    r_s = secondary_rate(channels, policy.p_ss)
    pt_used = np.cumsum(policy.p_d + policy.delta_r)
    pt_avail = np.cumsum(harvests.e_p)
    st_used = np.cumsum(policy.p_sp + policy.p_ss)
    st_avail = np.cumsum(harvests.e_s + cfg.alpha * policy.delta_r)
    level = battery_levels(cfg, harvests, policy)
    return ConstraintResiduals(
        coop_rate=n * r_p_bar - float(np.sum(r_pc)),
        sec_rate=n * cfg.rs_bar - float(np.sum(r_s)),
        pt_energy=pt_used - pt_avail,
        st_energy=st_used - st_avail,
        battery=level - cfg.b_max,
        battery_level=level,
    )


def is_feasible(residuals: ConstraintResiduals, tol: float,
                include_coop_rate: bool = False) -> bool:
    """True when all residuals are within `tol` of the feasible side."""
    worst = residuals.max_violation()
    if include_coop_rate:
        worst = max(worst, residuals.coop_rate)
    return worst <= tol


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Flat field dict used by the text serialization and manifests."""
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def config_from_dict(d: dict) -> ScenarioConfig:
    """Build a ScenarioConfig from a flat dict, accepting noise in dBm.

    A `noise_dbm` key takes precedence over `noise_power` and is converted
    to watts here; unknown keys are rejected.
    """
    d = dict(d)
    if "noise_dbm" in d:
        d["noise_power"] = dbm_to_watts(float(d.pop("noise_dbm")))
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "n_slots" in d:
        n = d["n_slots"]
        if not float(n).is_integer():
            raise ConfigError(f"n_slots must be an integer, got {n}")
        d["n_slots"] = int(n)
    return ScenarioConfig(**{k: v for k, v in d.items()})
