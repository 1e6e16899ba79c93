"""Finite-buffer and abandonment extensions through level-dependent rate matrices.

Above level s both variants satisfy p_i = p_{i-1} R_i.  The R_i follow from
a backward recursion that starts at the top level (the buffer bound N, or
a truncation level N* for abandonments), and the first-passage matrix from
level s+1 down to s is recovered as G_{s+1} = L1^-1 R_{s+1} Lm1_{s+1}.
The boundary levels are then solved exactly as in the base model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import boundary as bd
from .model import GeneratorBlocks, ModelParams, NumericalError, ParameterError, generator_blocks
from .solver import MarginalDistribution


@dataclass(frozen=True)
class FiniteBufferParams:
    base: ModelParams
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < self.base.s:
            raise ParameterError(f"buffer bound N must be an integer >= s={self.base.s}, got {self.N!r}")


@dataclass(frozen=True)
class AbandonmentParams:
    base: ModelParams
    delta: float
    truncation_tail: float = 1e-10
    max_levels: int = 4_000_000

    def __post_init__(self):
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ParameterError(f"abandonment rate delta must be positive, got {self.delta!r}")
        if not 0 < self.truncation_tail < 1:
            raise ParameterError("truncation_tail must lie in (0, 1)")

    def blocks_at(self, l: int, blocks: GeneratorBlocks) -> tuple[np.ndarray, np.ndarray]:
        """(L0_l, Lm1_l) for level s + l, l >= 1."""
        shift = l * self.delta * np.eye(self.base.s + 1)
        return blocks.lambda0 - shift, blocks.lambdam1 + shift


@dataclass(frozen=True)
class LevelDependentTail:
    """R_i for i = s+1..top (``R[0]`` is R_{s+1}) and the G_{s+1} they imply."""

    R: np.ndarray  # shape (levels, s + 1, s + 1)
    G_first: np.ndarray


@njit(cache=True)
def _backward_rates(lam, out_diag, down_diag, fast_sub):
    """R_k = -lam (A_k)^-1 with A_k = diag(-out_diag[k]) + R_{k+1} Lm1_{k+1}.

    Row ``k`` of ``out_diag`` holds the total outflow rates of level k (top
    level last); row ``k`` of ``down_diag`` holds the diagonal of the
    down-block of level k + 1.  All level matrices are lower triangular,
    so the inverse is a forward substitution.  Returns R in level order.
    """
    m, n = out_diag.shape
    R = np.zeros((m, n, n))
    A = np.zeros((n, n))
    for k in range(m - 1, -1, -1):
        A[:, :] = 0.0
        for a in range(n):
            A[a, a] = -out_diag[k, a]
        if k < m - 1:
            Rn = R[k + 1]
            for a in range(n):
                for b in range(a + 1):
                    v = Rn[a, b] * down_diag[k, b]
                    if b + 1 <= a:
                        v += Rn[a, b + 1] * fast_sub[b]
                    A[a, b] += v
        inv = R[k]
        for a in range(n):
            if not A[a, a] < 0.0:
                return R, k
            inv[a, a] = 1.0 / A[a, a]
            for b in range(a):
                acc = 0.0
                for c in range(b, a):
                    acc += A[a, c] * inv[c, b]
                inv[a, b] = -acc / A[a, a]
        for a in range(n):
            for b in range(a + 1):
                inv[a, b] *= -lam
    return R, -1


@njit(cache=True)
def _propagate(p_s, R):
    """Rows p_{s+1}, p_{s+2}, ... from p_i = p_{i-1} R_i."""
    m, n = R.shape[0], p_s.shape[0]
    out = np.zeros((m, n))
    vec = p_s.copy()
    for k in range(m):
        nxt = np.zeros(n)
        for b in range(n):
            acc = 0.0
            for a in range(b, n):
                acc += vec[a] * R[k, a, b]
            nxt[b] = acc
        out[k] = nxt
        vec = nxt
    return out


def _level_rates(lam, out_diag, down_diag, fast_sub) -> np.ndarray:
    R, failed = _backward_rates(lam, out_diag, down_diag, fast_sub)
    if failed >= 0 or not np.all(np.isfinite(R)):
        raise NumericalError(f"singular level matrix at offset {max(failed, 0)}", stage="level_rates")
    return R


def finite_buffer_tail(fb: FiniteBufferParams) -> LevelDependentTail:
    p = fb.base
    blocks = generator_blocks(p)
    n = p.s + 1
    if fb.N == p.s:
        # arrivals at level s are blocked: G_{s+1} acts as the identity
        return LevelDependentTail(np.zeros((0, n, n)), np.eye(n))
    m = fb.N - p.s
    out_diag = np.tile(-np.diag(blocks.lambda0), (m, 1))
    out_diag[-1] -= p.lam  # no arrivals at level N: L0 + L1
    down_diag = np.tile(np.diag(blocks.lambdam1), (m, 1))
    R = _level_rates(p.lam, out_diag, down_diag, np.diag(blocks.lambdam1, k=-1).copy())
    G = R[0] @ blocks.lambdam1 / p.lam
    return LevelDependentTail(R, G)


def abandonment_tail(ab: AbandonmentParams, top_level: int) -> LevelDependentTail:
    """Backward recursion from R_{top+1} = 0 down to R_{s+1}."""
    p = ab.base
    blocks = generator_blocks(p)
    m = top_level - p.s
    shift = ab.delta * np.arange(1, m + 2)[:, None]  # l delta at level s + l
    out_diag = -np.diag(blocks.lambda0)[None, :] + shift[:-1]
    down_diag = np.diag(blocks.lambdam1)[None, :] + shift[1:]
    R = _level_rates(p.lam, out_diag, down_diag, np.diag(blocks.lambdam1, k=-1).copy())
    # the first passage from level s+1 includes its abandonments
    G = R[0] @ (blocks.lambdam1 + ab.delta * np.eye(p.s + 1)) / p.lam
    return LevelDependentTail(R, G)


def _solve_with_tail(
    params: ModelParams, tail: LevelDependentTail, p_s: np.ndarray | None = None
) -> bd.StationaryDistribution:
    blocks = generator_blocks(params)
    theta = bd.theta_table(params)
    psi = bd.psi_table(params, theta)
    if p_s is None:
        p_s = bd.solve_level_s(blocks, tail.G_first, psi.Psi)
    lower = bd.backward_boundary(params, theta, psi, p_s)
    return bd.normalize(params, lower, p_s, tail=_propagate(p_s, tail.R))


def solve_finite_buffer(fb: FiniteBufferParams) -> bd.StationaryDistribution:
    """Stationary distribution with at most N customers; any loads allowed."""
    if fb.N == fb.base.s:
        # nobody ever waits, so level s only visits phase s and the embedded
        # level-s chain is reducible; its stationary vector is the unit vector
        p_s = np.zeros(fb.base.s + 1)
        p_s[-1] = 1.0
        return _solve_with_tail(fb.base, finite_buffer_tail(fb), p_s)
    return _solve_with_tail(fb.base, finite_buffer_tail(fb))


def initial_truncation(ab: AbandonmentParams) -> int:
    p = ab.base
    return p.s + max(50, math.ceil(10 * p.lam / ab.delta))


def solve_abandonment(ab: AbandonmentParams) -> bd.StationaryDistribution:
    """Stationary distribution with abandonment rate delta per waiting customer.

    The truncation level starts at s + max(50, 10 lam / delta) and the extra
    levels are doubled until P(L >= s) moves by at most ``truncation_tail``.
    """
    s = ab.base.s
    top = initial_truncation(ab)
    prev = _solve_with_tail(ab.base, abandonment_tail(ab, top))
    while True:
        nxt_top = s + 2 * (top - s)
        if nxt_top - s > ab.max_levels:
            raise NumericalError(
                f"truncation level did not stabilize below s + {ab.max_levels} levels",
                stage="solve_abandonment",
            )
        cur = _solve_with_tail(ab.base, abandonment_tail(ab, nxt_top))
        if abs(cur.delay_probability() - prev.delay_probability()) <= ab.truncation_tail:
            return cur
        prev, top = cur, nxt_top


def find_modes(marginal: MarginalDistribution | np.ndarray, rel: float = 1e-6) -> list[tuple[int, float]]:
    """Local maxima of P(L = i) that exceed both neighbours by a factor 1 + rel.

    Runs of values equal within ``rel`` (as in an Erlang marginal with
    integer offered load, where P(a - 1) = P(a)) count as one candidate,
    reported at their first index.  The last index is a candidate only when
    no mass lies beyond it.
    """
    if isinstance(marginal, MarginalDistribution):
        probs, tail = marginal.probabilities, marginal.tail_mass
    else:
        probs, tail = np.asarray(marginal, dtype=float), 0.0
    n = len(probs)
    runs = []  # (first index, last index)
    start = 0
    for i in range(1, n + 1):
        if i == n or abs(probs[i] - probs[start]) > rel * max(probs[i], probs[start]):
            runs.append((start, i - 1))
            start = i
    modes = []
    for r, (first, last) in enumerate(runs):
        value = probs[first]
        if value <= 0 or (last == n - 1 and tail > 0):
            continue
        left = probs[runs[r - 1][0]] if r > 0 else -np.inf
        right = probs[runs[r + 1][0]] if r + 1 < len(runs) else -np.inf
        if value > (1 + rel) * left and value > (1 + rel) * right:
            modes.append((first, float(value)))
    return modes
