"""Model parameters, generator blocks and the ergodicity test.

The process is (X, Y): X is the total number of customers, Y the number of
non-delayed customers in service.  Customers that find a free server are
served at ``mu_fast``; customers that had to wait are served at ``mu_slow``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class SlowdownError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(SlowdownError, ValueError):
    """Invalid or inconsistent model parameters."""


class ErgodicityError(ParameterError):
    """The requested computation needs ``rho_slow < 1``."""


class NumericalError(SlowdownError, ArithmeticError):
    """A numerical stage produced an invalid intermediate result."""

    def __init__(self, message: str, stage: str | None = None):
        self.stage = stage
        super().__init__(f"[{stage}] {message}" if stage else message)


@dataclass(frozen=True)
class ModelParams:
    s: int
    lam: float
    mu_fast: float
    mu_slow: float

    @property
    def rho_fast(self) -> float:
        return self.lam / (self.s * self.mu_fast)

    @property
    def rho_slow(self) -> float:
        return self.lam / (self.s * self.mu_slow)

    @property
    def is_stable(self) -> bool:
        return check_ergodicity(self)

    def as_dict(self) -> dict:
        return {
            "s": self.s,
            "lambda": self.lam,
            "mu_fast": self.mu_fast,
            "mu_slow": self.mu_slow,
            "rho_fast": self.rho_fast,
            "rho_slow": self.rho_slow,
        }


@dataclass(frozen=True)
class GeneratorBlocks:
    """Level transition blocks for the inner levels i > s.

    ``lambda1`` moves one level up, ``lambda0`` stays, ``lambdam1`` moves one
    level down.  All are (s+1) x (s+1), indexed by phase.
    """

    lambda1: np.ndarray
    lambda0: np.ndarray
    lambdam1: np.ndarray


def build_params(s: int, lam: float, mu_fast: float, mu_slow: float) -> ModelParams:
    """Validate rates and return a :class:`ModelParams`.

    Stability is not enforced here; the finite-buffer and abandonment
    variants accept ``rho_slow >= 1``.
    """
    if isinstance(s, bool) or int(s) != s or s < 1:
        raise ParameterError(f"servers must be a positive integer, got {s!r}")
    for name, value in (("lambda", lam), ("mu_fast", mu_fast), ("mu_slow", mu_slow)):
        if not (math.isfinite(value) and value > 0):
            raise ParameterError(f"{name} must be a positive finite rate, got {value!r}")
    if not mu_fast > mu_slow:
        raise ParameterError(
            f"mu_fast must exceed mu_slow (got mu_fast={mu_fast!r}, mu_slow={mu_slow!r})"
        )
    return ModelParams(int(s), float(lam), float(mu_fast), float(mu_slow))


def params_from_loads(s: int, lam: float, rho_fast: float, rho_slow: float) -> ModelParams:
    """Build parameters from loads: mu = lam / (s * rho)."""
    if not (rho_fast > 0 and rho_slow > 0):
        raise ParameterError("loads must be positive")
    return build_params(s, lam, lam / (s * rho_fast), lam / (s * rho_slow))


def generator_blocks(params: ModelParams) -> GeneratorBlocks:
    s, lam, mf, ms = params.s, params.lam, params.mu_fast, params.mu_slow
    j = np.arange(s + 1, dtype=float)
    slow = (s - j) * ms
    fast = j * mf
    lambda1 = lam * np.eye(s + 1)
    lambdam1 = np.diag(slow) + np.diag(fast[1:], k=-1)
    # Diagonal of lambda0 taken as minus the off-block row sums so that the
    # blocks sum to a conservative generator without rounding residue.
    lambda0 = -np.diag(lambda1.sum(axis=1) + lambdam1.sum(axis=1))
    return GeneratorBlocks(lambda1, lambda0, lambdam1)


def check_ergodicity(params: ModelParams) -> bool:
    """True iff the infinite-buffer chain is positive recurrent (rho_slow < 1)."""
    return params.lam < params.s * params.mu_slow


def mean_drift(params: ModelParams) -> tuple[float, float]:
    """Upward and downward mean drift of the inner levels.

    The phase process of the summed blocks is absorbed in phase 0, so its
    stationary vector is (1, 0, ..., 0).
    """
    blocks = generator_blocks(params)
    pi = np.zeros(params.s + 1)
    pi[0] = 1.0
    ones = np.ones(params.s + 1)
    return float(pi @ blocks.lambda1 @ ones), float(pi @ blocks.lambdam1 @ ones)
