"""Exact and asymptotic analysis of a many-server queue with threshold slowdown."""

from .boundary import StationaryDistribution
from .model import (
    ErgodicityError,
    ModelParams,
    NumericalError,
    ParameterError,
    SlowdownError,
    build_params,
    check_ergodicity,
    generator_blocks,
    params_from_loads,
)
from .solver import (
    dimension_servers,
    erlang_c,
    joint_heatmap,
    marginal_total,
    performance_report,
    solve_stationary,
)

__version__ = "0.1.0"
