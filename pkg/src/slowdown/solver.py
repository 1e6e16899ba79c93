"""End-to-end solve, performance measures and M/M/s reference formulas."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from . import boundary as bd
from .model import (
    ErgodicityError,
    ModelParams,
    NumericalError,
    ParameterError,
    build_params,
    check_ergodicity,
    generator_blocks,
)
from .rate_matrices import rate_matrices

DEFAULT_TAIL = 1e-10
MAX_EXTRA_LEVELS = 2000


def worker_count() -> int:
    """Parallelism cap from SLOWDOWN_THREADS (default: all cores)."""
    raw = os.environ.get("SLOWDOWN_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


@dataclass(frozen=True)
class PerformanceReport:
    p_wait: float
    mean_queue: float
    mean_system: float
    rho: float
    rho_minus_rho_fast: float
    p_empty: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MarginalDistribution:
    probabilities: np.ndarray
    tail_mass: float

    @property
    def i_max(self) -> int:
        return len(self.probabilities) - 1


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except NumericalError as exc:
        if exc.stage is None:
            raise NumericalError(str(exc), stage=name) from exc
        raise


def solve_stationary(params: ModelParams) -> bd.StationaryDistribution:
    """Exact stationary distribution of the infinite-buffer slowdown system."""
    if not check_ergodicity(params):
        raise ErgodicityError(
            f"stationary distribution requires rho_slow < 1 (rho_slow={params.rho_slow!r})"
        )
    blocks = generator_blocks(params)
    rates = _stage("rate_matrices", rate_matrices, blocks, params)
    theta = _stage("theta_table", bd.theta_table, params)
    psi = _stage("psi_table", bd.psi_table, params, theta)
    p_s = _stage("solve_level_s", bd.solve_level_s, blocks, rates.G, psi.Psi)
    lower = _stage("backward_boundary", bd.backward_boundary, params, theta, psi, p_s)
    return _stage("normalize", bd.normalize, params, lower, p_s, rates=rates)


def performance_report(dist: bd.StationaryDistribution) -> PerformanceReport:
    params = dist.params
    p_wait = dist.delay_probability()
    mean_queue = dist.mean_queue()
    rho = (1.0 - p_wait) * params.rho_fast + p_wait * params.rho_slow
    return PerformanceReport(
        p_wait=p_wait,
        mean_queue=mean_queue,
        mean_system=mean_queue + dist.mean_busy_servers(),
        rho=rho,
        rho_minus_rho_fast=rho - params.rho_fast,
        p_empty=dist.prob(0, 0),
    )


def default_i_max(dist: bd.StationaryDistribution, tail: float = DEFAULT_TAIL) -> int:
    """Smallest level whose remaining tail is at most ``tail`` (capped)."""
    cap = dist.s + MAX_EXTRA_LEVELS
    if dist.max_level is not None:
        cap = min(cap, dist.max_level)
    remaining = dist.total_mass()
    for i, vec in enumerate(dist.levels(cap)):
        remaining -= vec.sum()
        if remaining <= tail:
            return max(i, dist.s)
    return cap


def marginal_total(dist: bd.StationaryDistribution, i_max: int | None = None) -> MarginalDistribution:
    """P(L = i) for i = 0..i_max and the mass above i_max."""
    if i_max is None:
        i_max = default_i_max(dist)
    if i_max < dist.s:
        raise ParameterError(f"i_max must be at least s={dist.s}, got {i_max}")
    probs = np.array([v.sum() for v in dist.levels(i_max)])
    if dist.rates is not None:
        nxt = dist.level(i_max + 1)
        tail = float(nxt @ dist.rates.inv_I_minus_R.sum(axis=1))
    else:
        tail = float(dist.tail[i_max - dist.s:].sum()) if dist.tail is not None else 0.0
    return MarginalDistribution(probs, tail)


def joint_heatmap(dist: bd.StationaryDistribution, i_max: int | None = None) -> np.ndarray:
    """Dense (i_max+1) x (s+1) array of p(i, j); zero where j > min(i, s)."""
    if i_max is None:
        i_max = default_i_max(dist)
    if i_max < dist.s:
        raise ParameterError(f"i_max must be at least s={dist.s}, got {i_max}")
    out = np.zeros((i_max + 1, dist.s + 1))
    for i, vec in enumerate(dist.levels(i_max)):
        out[i, : len(vec)] = vec
    return out


# ---------------------------------------------------------------------------
# M/M/s references


def erlang_b(s: int, offered_load: float) -> float:
    b = 1.0
    for k in range(1, s + 1):
        b = offered_load * b / (k + offered_load * b)
    return b


def erlang_c(s: int, offered_load: float) -> float:
    """M/M/s delay probability via the Erlang-B recursion."""
    if not offered_load < s:
        raise ParameterError(f"Erlang C needs offered load < s (got {offered_load!r} >= {s})")
    if offered_load <= 0:
        return 0.0
    b = erlang_b(s, offered_load)
    return s * b / (s - offered_load * (1.0 - b))


def mms_mean_queue(s: int, lam: float, mu: float) -> float:
    a = lam / mu
    rho = a / s
    return erlang_c(s, a) * rho / (1.0 - rho)


def mms_mean_system(s: int, lam: float, mu: float) -> float:
    return mms_mean_queue(s, lam, mu) + lam / mu


def mms_marginal(s: int, lam: float, mu: float, i_max: int) -> np.ndarray:
    """P(L = i), i = 0..i_max, for the M/M/s queue (computed in log space)."""
    a = lam / mu
    rho = a / s
    if not rho < 1:
        raise ParameterError("M/M/s marginal requires lam < s mu")
    k = np.arange(s + 1)
    log_head = k * math.log(a) - gammaln(k + 1)
    log_norm = logsumexp(np.append(log_head[:s], log_head[s] - math.log1p(-rho)))
    i = np.arange(i_max + 1)
    logw = np.where(i <= s, log_head[np.minimum(i, s)], log_head[s] + (i - s) * math.log(rho))
    return np.exp(logw - log_norm)


# ---------------------------------------------------------------------------
# dimensioning


def _slowdown_wait(s: int, lam: float, mu_fast: float, mu_slow: float) -> float:
    params = build_params(s, lam, mu_fast, mu_slow)
    return solve_stationary(params).delay_probability()


def dimension_servers(
    mu_fast: float, mu_slow: float, lam: float, target_p_wait: float
) -> tuple[int, int]:
    """Minimal servers with P(W > 0) <= target for the fast and slowdown systems."""
    if not 0 < target_p_wait < 1:
        raise ParameterError(f"target must lie in (0, 1), got {target_p_wait!r}")
    build_params(1, lam, mu_fast, mu_slow)  # rate validation
    cap = max(10, int(math.ceil(10 * lam / mu_slow)))

    s_fast = int(math.floor(lam / mu_fast)) + 1
    while erlang_c(s_fast, lam / mu_fast) > target_p_wait:
        s_fast += 1
        if s_fast > cap:
            raise NumericalError("server search exceeded its cap", stage="dimension_servers")

    s = max(s_fast, int(math.floor(lam / mu_slow)) + 1)
    workers = worker_count()
    while s <= cap:
        # evaluate a window of candidates, keep the smallest adequate one
        window = list(range(s, min(s + workers, cap + 1)))
        if workers > 1 and len(window) > 1:
            with ThreadPoolExecutor(workers) as pool:
                waits = list(pool.map(lambda n: _slowdown_wait(n, lam, mu_fast, mu_slow), window))
        else:
            waits = [_slowdown_wait(n, lam, mu_fast, mu_slow) for n in window]
        for n, w in zip(window, waits):
            if w <= target_p_wait:
                return s_fast, n
        s = window[-1] + 1
    raise NumericalError("server search exceeded its cap", stage="dimension_servers")
