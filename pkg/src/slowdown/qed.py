"""Square-root (QED) scaling of the slowdown system and its diffusion bounds.

For ``s`` servers the arrival rate is ``s mu_S (1 - beta/sqrt(s))`` and the
fast rate is ``mu_S (1 + gamma/sqrt(s))``.  The fast and slow systems,
which bound the slowdown system stochastically, then converge to
piecewise-linear diffusions: an Ornstein-Uhlenbeck part below zero and a
reflected Brownian motion with drift above zero.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import log_ndtr, ndtr

from .model import ModelParams, ParameterError, build_params
from .solver import erlang_c, solve_stationary, worker_count

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class System(str, Enum):
    FAST = "fast"
    SLOW = "slow"


@dataclass(frozen=True)
class QedParams:
    beta: float
    gamma: float
    mu_slow: float = 1.0

    def __post_init__(self):
        for name in ("beta", "gamma", "mu_slow"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(f"{name} must be positive and finite, got {value!r}")

    def drift_slope_offset(self, system: System) -> float:
        """Constant b with limiting drift mu_S (-b - x) below 0 and -b mu_S above."""
        return self.beta + self.gamma if System(system) is System.FAST else self.beta


@dataclass(frozen=True)
class DiffusionSpec:
    system: System
    b: float
    mu_slow: float
    c: float

    @property
    def variance(self) -> float:
        return 2.0 * self.mu_slow

    @property
    def drift_above(self) -> float:
        return -self.b * self.mu_slow

    def drift_below(self, x):
        return self.mu_slow * (-self.b - np.asarray(x, dtype=float))


def _phi_over_Phi(b: float) -> float:
    return math.exp(-0.5 * b * b - _LOG_SQRT_2PI - float(log_ndtr(b)))


def halfin_whitt(beta: float) -> float:
    """Limiting M/M/s delay probability (1 + beta Phi(beta)/phi(beta))^-1, beta > 0."""
    if not beta > 0:
        raise ParameterError(f"beta must be positive, got {beta!r}")
    # Phi/phi grows like exp(beta^2/2); evaluate it in log space
    log_ratio = float(log_ndtr(beta)) + 0.5 * beta * beta + _LOG_SQRT_2PI
    return 1.0 / (1.0 + beta * math.exp(log_ratio)) if log_ratio < 700 else 0.0


def scaled_params(qed: QedParams, s: int) -> ModelParams:
    if not s > qed.beta**2:
        raise ParameterError(f"scaling needs s > beta^2 = {qed.beta**2!r}, got s={s}")
    root = math.sqrt(s)
    lam = s * qed.mu_slow * (1.0 - qed.beta / root)
    return build_params(s, lam, qed.mu_slow * (1.0 + qed.gamma / root), qed.mu_slow)


def _scaled_rates(qed: QedParams, s: int) -> tuple[float, float]:
    p = scaled_params(qed, s)
    return p.lam, p.mu_fast


def finite_s_drift(system: System, qed: QedParams, s: int, x):
    """Infinitesimal mean and variance of (X - s)/sqrt(s) at x for ``s`` servers.

    Busy servers at x are min(floor(s + x sqrt(s)), s); ``x`` may be an array.
    """
    lam, mu_fast = _scaled_rates(qed, s)
    mu = mu_fast if System(system) is System.FAST else qed.mu_slow
    x = np.asarray(x, dtype=float)
    if np.any(x < -math.sqrt(s)):
        raise ParameterError("x must be at least -sqrt(s)")
    busy = np.minimum(np.floor(s + x * math.sqrt(s)), s)
    mean = (lam - busy * mu) / math.sqrt(s)
    var = (lam + busy * mu) / s
    return mean, var


def limit_drift(system: System, qed: QedParams, x):
    """Limiting infinitesimal mean and variance."""
    b = qed.drift_slope_offset(system)
    x = np.asarray(x, dtype=float)
    mean = qed.mu_slow * (-b - np.minimum(x, 0.0))
    return mean, np.full_like(mean, 2.0 * qed.mu_slow)


def drift_sup_error(system: System, qed: QedParams, s: int, lo: float = -3.0, hi: float = 3.0,
                    n: int = 200_001) -> tuple[float, float]:
    """sup over [lo, hi] of |finite-s mean - limit| and |finite-s variance - limit|.

    The finite-s coefficients jump where s + x sqrt(s) crosses an integer,
    and the error peaks just before each jump, so the grid is augmented
    with the left neighbours of every jump point in range.
    """
    root = math.sqrt(s)
    k = np.arange(math.ceil(s + lo * root), math.floor(s + hi * root) + 1)
    jumps = (k - s) / root
    x = np.concatenate([np.linspace(lo, hi, n), np.nextafter(jumps, -np.inf)])
    x = x[(x >= lo) & (x <= hi)]
    m, v = finite_s_drift(system, qed, s, x)
    m0, v0 = limit_drift(system, qed, x)
    return float(np.max(np.abs(m - m0))), float(np.max(np.abs(v - v0)))


def diffusion_spec(system: System, qed: QedParams) -> DiffusionSpec:
    b = qed.drift_slope_offset(system)
    r = _phi_over_Phi(b)
    return DiffusionSpec(System(system), b, qed.mu_slow, b / (b + r))


def diffusion_density(system: System, qed: QedParams, x):
    """Stationary density of the limiting diffusion (vectorized in x)."""
    spec = diffusion_spec(system, qed)
    b, c = spec.b, spec.c
    x = np.asarray(x, dtype=float)
    below = c * np.exp(-0.5 * (x + b) ** 2 - _LOG_SQRT_2PI) / ndtr(b)
    above = (1.0 - c) * b * np.exp(-b * np.maximum(x, 0.0))
    return np.where(x <= 0, below, above)


def delay_bounds(qed: QedParams) -> tuple[float, float]:
    """(lower, upper) limits of P(W > 0): the fast system with beta + gamma
    gives the lower one, the slow system with beta the upper one."""
    return halfin_whitt(qed.beta + qed.gamma), halfin_whitt(qed.beta)


def effective_load(qed: QedParams, s: int, p_wait: float) -> float:
    g = qed.gamma / math.sqrt(s)
    return (1.0 - qed.beta / math.sqrt(s)) * (1.0 + p_wait * g) / (1.0 + g)


@dataclass(frozen=True)
class QedRow:
    s: int
    p_wait_fast: float
    p_wait_slowdown: float
    p_wait_slow: float
    lower: float
    upper: float


def _row(qed: QedParams, s: int) -> QedRow:
    p = scaled_params(qed, s)
    lower, upper = delay_bounds(qed)
    return QedRow(
        s=s,
        p_wait_fast=erlang_c(s, p.lam / p.mu_fast),
        p_wait_slowdown=solve_stationary(p).delay_probability(),
        p_wait_slow=erlang_c(s, p.lam / p.mu_slow),
        lower=lower,
        upper=upper,
    )


def qed_convergence_table(qed: QedParams, s_list) -> list[QedRow]:
    """Exact delay probabilities of the fast, slowdown and slow systems per s."""
    s_list = [int(s) for s in s_list]
    for s in s_list:
        if not s > qed.beta**2:
            raise ParameterError(f"scaling needs s > beta^2, got s={s}")
    workers = min(worker_count(), len(s_list))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda s: _row(qed, s), s_list))
    return [_row(qed, s) for s in s_list]
