"""CVaR-optimal adaptive liquidation: closed forms, benchmarks and Monte Carlo."""

from .phi import PhiTable, build_phi_table, compute_constants, default_table
from .policy import AugmentedState, MarketParams, TruncationIndex, f_star, g_star, value_function
from .risk import empirical_cvar, empirical_scvar, empirical_var, kappa, normal_cvar
from .schedules import DeterministicSchedule, exp_optimal, ratios, vwap_optimal
from .sim import SimConfig, aggregate, frontier, simulate_batch, simulate_path

__version__ = "0.1.0"
