"""Direct solve of the generator truncated at a finite level.

States are ordered level by level, (0,0), (1,0), (1,1), ..., so every
transition links states at most s + 2 positions apart and GTH elimination
runs in band storage.  Above the truncation level arrivals are blocked,
which makes the finite-buffer model the natural truncation of all three
models.  The result is independent of the rate-matrix machinery and is
used as a reference.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .. import boundary as bd
from ..model import ModelParams, NumericalError, ParameterError
from ..variants import AbandonmentParams, FiniteBufferParams
from .ctmc import unpack_model

MAX_STATES = 2_000_000


def level_offsets(s: int, top: int) -> np.ndarray:
    """Index of state (i, 0) for i = 0..top + 1."""
    sizes = np.minimum(np.arange(top + 1), s) + 1
    return np.concatenate([[0], np.cumsum(sizes)])


@njit(cache=True)
def _fill_band(s, lam, mf, ms, top, delta, offsets, w):
    n = offsets[top + 1]
    band = np.zeros((n, 2 * w + 1))  # band[a, w + b - a] = rate a -> b
    for i in range(top + 1):
        for j in range(min(i, s) + 1):
            a = offsets[i] + j
            if i < top:
                b = offsets[i + 1] + (j + 1 if i < s else j)
                band[a, w + b - a] += lam
            if i > 0:
                slow = ((i - j) if i <= s else (s - j)) * ms + max(i - s, 0) * delta
                if slow > 0:
                    b = offsets[i - 1] + j
                    band[a, w + b - a] += slow
                if j > 0:
                    b = offsets[i - 1] + j - 1
                    band[a, w + b - a] += j * mf
    return band


@njit(cache=True)
def gth_banded(band, w):
    """Stationary vector of the generator whose off-diagonal rates are in ``band``.

    The diagonal is never used: GTH takes every pivot as the sum of the
    remaining off-diagonal row entries, so there are no subtractions.
    """
    n = band.shape[0]
    pivot = np.zeros(n)
    for k in range(n - 1, 0, -1):
        lo = max(0, k - w)
        S = 0.0
        for b in range(lo, k):
            S += band[k, w + b - k]
        if not S > 0.0:
            return np.full(n, np.nan)
        pivot[k] = S
        for a in range(lo, k):
            f = band[a, w + k - a]
            if f == 0.0:
                continue
            f /= S
            for b in range(lo, k):
                if b != a:
                    band[a, w + b - a] += f * band[k, w + b - k]
    x = np.zeros(n)
    x[0] = 1.0
    for k in range(1, n):
        acc = 0.0
        for a in range(max(0, k - w), k):
            acc += x[a] * band[a, w + k - a]
        x[k] = acc / pivot[k]
    return x / x.sum()


def _solve_truncated(base: ModelParams, top: int, delta: float) -> np.ndarray:
    s = base.s
    offsets = level_offsets(s, top)
    n = int(offsets[-1])
    if n > MAX_STATES:
        raise NumericalError(
            f"truncated generator needs {n} states (> {MAX_STATES}); use the matrix-analytic solver",
            stage="truncated_generator_solve",
        )
    w = s + 2
    band = _fill_band(s, base.lam, base.mu_fast, base.mu_slow, top, delta, offsets, w)
    x = gth_banded(band, w)
    if not np.all(np.isfinite(x)):
        raise NumericalError("GTH pivot vanished", stage="truncated_generator_solve")
    return x


def _as_distribution(base: ModelParams, x: np.ndarray, top: int) -> bd.StationaryDistribution:
    s = base.s
    offsets = level_offsets(s, top)
    boundary = tuple(x[offsets[i]:offsets[i + 1]] for i in range(min(s, top + 1)))
    p_s = x[offsets[s]:offsets[s + 1]] if top >= s else np.zeros(s + 1)
    tail = x[offsets[s + 1]:].reshape(-1, s + 1) if top > s else np.zeros((0, s + 1))
    return bd.StationaryDistribution(base, boundary, p_s, 1.0, rates=None, tail=tail)


def truncated_generator_solve(model, tail_tol: float = 1e-13, start_level: int | None = None):
    """Stationary distribution of the chain truncated at a level L.

    Finite-buffer models are solved at L = N.  Otherwise L starts at
    ``start_level`` (default s + 64) and doubles its distance to s until
    P(X >= s) changes by at most ``tail_tol`` and the top level itself
    carries at most ``tail_tol`` mass.
    """
    base, bound, delta = unpack_model(model)
    if not 0 < tail_tol < 1:
        raise ParameterError("tail_tol must lie in (0, 1)")
    if isinstance(model, FiniteBufferParams):
        return _as_distribution(base, _solve_truncated(base, bound, 0.0), bound)
    if not isinstance(model, AbandonmentParams) and not base.lam < base.s * base.mu_slow:
        raise ParameterError("the untruncated model is unstable (rho_slow >= 1)")
    s = base.s
    top = start_level if start_level is not None else s + 64
    prev = _as_distribution(base, _solve_truncated(base, top, delta), top)
    while True:
        top = s + 2 * (top - s)
        cur = _as_distribution(base, _solve_truncated(base, top, delta), top)
        top_mass = float(cur.level(top).sum())
        if abs(cur.delay_probability() - prev.delay_probability()) <= tail_tol and top_mass <= tail_tol:
            return cur
        prev = cur
