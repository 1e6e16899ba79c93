"""Coupled FCFS simulation of the slow, slowdown and fast systems.

All three systems see the same arrival epochs and the same base service
requirements B_S ~ Exp(mu_S).  The fast system uses (mu_S/mu_F) B_S, the
slow system B_S, and the slowdown system B_S for customers that wait and
(mu_S/mu_F) B_S for customers that start service on arrival.  Waiting
times follow the Kiefer-Wolfowitz recursion on the sorted vector of
server release times.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..model import ModelParams, ParameterError
from ..solver import worker_count
from .ctmc import SimConfig, stream

SLOW, SLOWDOWN, FAST = 0, 1, 2


@dataclass(frozen=True)
class CouplingReport:
    customers_checked: int
    violations_WS_ge_W: int
    violations_W_ge_WF: int
    violations_XS_ge_X: int
    violations_X_ge_XF: int
    max_violation_magnitude: float

    @property
    def total_violations(self) -> int:
        return (self.violations_WS_ge_W + self.violations_W_ge_WF
                + self.violations_XS_ge_X + self.violations_X_ge_XF)

    def merge(self, other: "CouplingReport") -> "CouplingReport":
        return CouplingReport(
            self.customers_checked + other.customers_checked,
            self.violations_WS_ge_W + other.violations_WS_ge_W,
            self.violations_W_ge_WF + other.violations_W_ge_WF,
            self.violations_XS_ge_X + other.violations_XS_ge_X,
            self.violations_X_ge_XF + other.violations_X_ge_XF,
            max(self.max_violation_magnitude, other.max_violation_magnitude),
        )


@njit(nogil=True, cache=True)
def _fcfs(arrivals, service_slow, s, ratio, mode):
    """Waiting and departure times under FCFS with s servers.

    ``mode`` selects the service rule (SLOW, SLOWDOWN or FAST).
    """
    n = arrivals.shape[0]
    free = np.zeros(s)  # sorted release times
    wait = np.empty(n)
    depart = np.empty(n)
    for i in range(n):
        a = arrivals[i]
        start = max(a, free[0])
        w = start - a
        if mode == SLOW or (mode == SLOWDOWN and w > 0.0):
            b = service_slow[i]
        else:
            b = ratio * service_slow[i]
        done = start + b
        # drop free[0], insert done keeping the array sorted
        k = 1
        while k < s and free[k] < done:
            free[k - 1] = free[k]
            k += 1
        free[k - 1] = done
        wait[i] = w
        depart[i] = done
    return wait, depart


def _counts(arrivals: np.ndarray, departures: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Number in system just after each time in ``times``."""
    return (np.searchsorted(arrivals, times, side="right")
            - np.searchsorted(np.sort(departures), times, side="right"))


def coupled_paths(params: ModelParams, customers: int, seed: int, replication: int = 0):
    """Arrivals and (wait, departure) arrays for the slow, slowdown and fast systems."""
    arrivals = np.cumsum(stream(seed, replication, "arrivals").exponential(1.0 / params.lam, customers))
    base = stream(seed, replication, "services").exponential(1.0 / params.mu_slow, customers)
    ratio = params.mu_slow / params.mu_fast
    out = [_fcfs(arrivals, base, params.s, ratio, mode) for mode in (SLOW, SLOWDOWN, FAST)]
    return arrivals, out


def _check(params: ModelParams, customers: int, seed: int, replication: int) -> CouplingReport:
    arrivals, ((ws, ds), (w, d), (wf, df)) = coupled_paths(params, customers, seed, replication)
    v_s = ws - w
    v_f = w - wf
    events = np.unique(np.concatenate([arrivals, ds, d, df]))
    xs, x, xf = (_counts(arrivals, dep, events) for dep in (ds, d, df))
    worst = max(0.0, float(-v_s.min()), float(-v_f.min()))
    return CouplingReport(
        customers_checked=customers,
        violations_WS_ge_W=int(np.count_nonzero(v_s < 0)),
        violations_W_ge_WF=int(np.count_nonzero(v_f < 0)),
        violations_XS_ge_X=int(np.count_nonzero(xs < x)),
        violations_X_ge_XF=int(np.count_nonzero(x < xf)),
        max_violation_magnitude=worst,
    )


def simulate_coupled(config: SimConfig) -> CouplingReport:
    """Dominance check W_S >= W >= W_F per customer and X_S >= X >= X_F at
    every event epoch, summed over replications.

    The number of customers is ``config.customers`` or, when unset, the
    expected number of arrivals over the horizon.
    """
    params = config.params
    if not isinstance(params, ModelParams):
        raise ParameterError("coupling is defined for the base model only")
    customers = config.customers or max(1, int(round(params.lam * config.horizon)))
    reps = range(config.replications)
    workers = min(worker_count(), config.replications)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            reports = list(pool.map(lambda r: _check(params, customers, config.seed, r), reps))
    else:
        reports = [_check(params, customers, config.seed, r) for r in reps]
    total = reports[0]
    for rep in reports[1:]:
        total = total.merge(rep)
    return total
