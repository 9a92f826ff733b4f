"""Delay-violation analytics, offloading optimisation and simulation for a
three-tier UE / edge / cloud system of tandem M/M/1 queues."""

from .hypoexp import RateVector, group_rates, tail_hypoexp, tail_oracle, tail_single
from .model import (
    ArrivalRates,
    LinkLoad,
    OffloadingPolicy,
    SystemParams,
    TailResult,
    default_params,
    derive_arrival_rates,
    stability_margin,
    tier_tails,
)
from .optimizer import OptResult, SgsConfig, coordinate_search, grid_search, sgs_optimize
from .simulator import Estimate, LinkModel, SimConfig, SimReport, des_run, mc_sample_tier, replication_stats

__all__ = [
    "ArrivalRates", "Estimate", "LinkLoad", "LinkModel", "OffloadingPolicy", "OptResult", "RateVector",
    "SgsConfig", "SimConfig", "SimReport", "SystemParams", "TailResult", "coordinate_search",
    "default_params", "derive_arrival_rates", "des_run", "grid_search", "group_rates",
    "mc_sample_tier", "replication_stats", "sgs_optimize", "stability_margin", "tail_hypoexp",
    "tail_oracle", "tail_single", "tier_tails",
]
