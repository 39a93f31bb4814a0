"""Joint source power and relay filter design for a full-duplex filter-and-forward relay."""

from .baselines import SCHEMES, conventional_sic, equal_power, relay_only, run_scheme, source_only
from .channel import (DESK_PROFILE, PAPER_PROFILE, ChannelSet, FrequencyGrid, SystemConfig, TapVector,
                      build_grid, dbm_to_w, draw_channels, load_config, w_to_dbm)
from .dual_solver import DualPoint, JointSolution, SolverOptions, joint_optimize
from .relay_model import Allocation, RateReport, total_rate

__all__ = [
    "SCHEMES",
    "DESK_PROFILE",
    "PAPER_PROFILE",
    "Allocation",
    "ChannelSet",
    "DualPoint",
    "FrequencyGrid",
    "JointSolution",
    "RateReport",
    "SolverOptions",
    "SystemConfig",
    "TapVector",
    "build_grid",
    "conventional_sic",
    "dbm_to_w",
    "draw_channels",
    "equal_power",
    "joint_optimize",
    "load_config",
    "relay_only",
    "run_scheme",
    "source_only",
    "total_rate",
    "w_to_dbm",
]

__version__ = "0.1.0"
