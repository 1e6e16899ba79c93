"""Independent checks: CTMC simulation, coupled FCFS simulation and a truncated direct solve."""

from .coupling import CouplingReport, coupled_paths, simulate_coupled
from .ctmc import Estimate, ExcursionStats, SamplePath, SimConfig, SimEstimates, simulate, stream
from .truncated import gth_banded, truncated_generator_solve

__all__ = [
    "CouplingReport",
    "Estimate",
    "ExcursionStats",
    "SamplePath",
    "SimConfig",
    "SimEstimates",
    "coupled_paths",
    "gth_banded",
    "simulate",
    "simulate_coupled",
    "stream",
    "truncated_generator_solve",
]
