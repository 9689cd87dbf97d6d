"""Bundled five-slot demo scenario with a known good cooperative policy.

The instance uses fixed (not sampled) channel gains and harvest patterns
and full energy-transfer efficiency.  `reference_policy` is a hand-checked
cooperative allocation for it: the PT front-loads transfers, the ST battery
tops out exactly at capacity in slot 4, and both nodes end the horizon with
empty batteries.  Tests and the `example` CLI subcommand use it as a fixed
point of comparison for the solver.
"""

from __future__ import annotations

import numpy as np

from .model import (ChannelRealization, HarvestRealization, PowerPolicy,
                    ScenarioConfig, normalize_gain)

__all__ = ["reference_config", "reference_instance", "reference_policy"]

_NOISE_W = 1e-3  # 0 dBm

_RAW_H_P = [0.0191, 0.0080, 0.0036, 0.0024, 0.0119]
_RAW_H_SP = [0.0065, 0.0074, 0.0194, 0.0256, 0.0067]
_RAW_H_SS = [0.0027, 0.0140, 0.0164, 0.0201, 0.0010]
_E_P = [7.0, 0.0, 0.0, 7.0, 0.0]
_E_S = [0.0, 0.0, 1.0, 0.0, 1.0]


def reference_config() -> ScenarioConfig:
    return ScenarioConfig(
        n_slots=5,
        e_p_amount=7.0,
        e_s_amount=1.0,
        b_max=3.5,
        alpha=1.0,
        noise_power=_NOISE_W,
        rs_bar=0.5,
    )


def reference_instance():
    """The demo scenario as (config, channels, harvests)."""
    cfg = reference_config()
    ch = ChannelRealization(
        h_p=normalize_gain(_RAW_H_P, _NOISE_W),
        h_sp=normalize_gain(_RAW_H_SP, _NOISE_W),
        h_ss=normalize_gain(_RAW_H_SS, _NOISE_W),
    )
    hv = HarvestRealization(e_p=np.array(_E_P), e_s=np.array(_E_S))
    return cfg, ch, hv


def reference_policy() -> PowerPolicy:
    """Known feasible cooperative allocation for the demo scenario."""
    return PowerPolicy(
        p_d=np.array([2.5555, 2.4828, 0.0, 0.0, 3.5]),
        delta_r=np.array([0.7216, 0.4908, 0.7493, 3.5, 0.0]),
        p_sp=np.array([0.0, 0.0, 2.5014, 3.1835, 1.0]),
        p_ss=np.array([0.0, 0.2249, 0.2354, 0.3165, 0.0]),
    )
