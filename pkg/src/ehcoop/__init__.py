"""Offline power policies for cooperating energy-harvesting transmitters.

A primary link low on harvested energy can lease spectrum to a secondary
transmitter that relays for it, and can wire energy across to fund the
relaying.  This package models the finite-horizon scheduling problem,
solves it with a layered water-filling method, cross-checks small
instances against an exhaustive grid oracle, audits solutions against
the structural properties of the optimum, and drives the Monte Carlo
sweeps behind the usual comparison figures.
"""

from .analysis import (PropositionAudit, SweepResult, battery_sweep,
                       check_propositions, cooperation_probability,
                       rate_region)
from .baseline import BaselineResult, max_rate_upper_bound, solve_no_coop
from .io import load_config, report_to_dict, tool_version, write_csv, \
    write_manifest
from .model import (ChannelRealization, ConfigError, ConstraintResiduals,
                    DomainError, HarvestRealization, PowerPolicy,
                    RateSummary, ScenarioConfig, ShapeError, battery_levels,
                    child_rng, config_from_dict, config_to_dict,
                    constraint_residuals, dbm_to_watts, is_feasible,
                    normalize_gain, point_to_point_rate, primary_coop_rate,
                    sample_realization, secondary_rate)
from .optimizer import DualState, SolveReport, SolverSettings, solve
from .oracle import GridBudgetError, OracleResult, brute_force_solve
from .reference import reference_config, reference_instance, reference_policy

__version__ = tool_version()

__all__ = [
    "BaselineResult",
    "ChannelRealization",
    "ConfigError",
    "ConstraintResiduals",
    "DomainError",
    "DualState",
    "GridBudgetError",
    "HarvestRealization",
    "OracleResult",
    "PowerPolicy",
    "PropositionAudit",
    "RateSummary",
    "ScenarioConfig",
    "ShapeError",
    "SolveReport",
    "SolverSettings",
    "SweepResult",
    "battery_levels",
    "battery_sweep",
    "brute_force_solve",
    "check_propositions",
    "child_rng",
    "config_from_dict",
    "config_to_dict",
    "constraint_residuals",
    "cooperation_probability",
    "dbm_to_watts",
    "is_feasible",
    "load_config",
    "max_rate_upper_bound",
    "normalize_gain",
    "point_to_point_rate",
    "primary_coop_rate",
    "rate_region",
    "reference_config",
    "reference_instance",
    "reference_policy",
    "report_to_dict",
    "sample_realization",
    "secondary_rate",
    "solve",
    "solve_no_coop",
    "tool_version",
    "write_csv",
    "write_manifest",
]
