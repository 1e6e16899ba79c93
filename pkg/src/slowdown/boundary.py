"""Boundary probabilities for levels 0..s via first-passage tables.

Below level s the delayed count i - j never increases and arrivals raise the
phase by one.  Two families of first-passage probabilities exploit this:

* ``theta_k(i, j)``: starting in (i, j), the probability that phase j + 1 is
  first entered in state (i + 1 - k, j + 1), i.e. after k slow completions.
* ``psi_(k,l)(i, j)``: starting in (i, j) below level k, the probability
  that level k is first entered in state (k, l).

With these, the chain censored on level s gives the unnormalized level-s
vector, and censoring on levels >= i gives each lower level in turn.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import GeneratorBlocks, ModelParams, NumericalError
from .rate_matrices import RateMatrices

NEGATIVE_CLAMP = 1e-12


def in_triangle(k: int, l: int, i: int, j: int) -> bool:
    """Membership of (i, j) in the triangular set south-west of (k, l)."""
    return k - l <= i <= k - 1 and 0 <= j <= i - (k - l)


@dataclass(frozen=True)
class ThetaTable:
    """Phase-passage probabilities, stored per phase by landing level.

    ``blocks[j][i - j, m - j - 1]`` is the probability that from (i, j) the
    chain first enters phase j + 1 at level m, so
    ``theta_k(i, j) = blocks[j][i - j, i - j - k]``.
    """

    s: int
    blocks: tuple[np.ndarray, ...]

    def __call__(self, k: int, i: int, j: int) -> float:
        if not (0 <= j <= i - k and k <= i <= self.s - 1):
            raise IndexError(f"theta_{k}({i},{j}) is outside its triangular domain")
        a = i - j
        return float(self.blocks[j][a, a - k])


@dataclass(frozen=True)
class PsiTable:
    """Level-passage probabilities from one level below each target level.

    ``level_passage[k - 1][m, l] = psi_(k,l)(k - 1, m)`` for k = 1..s; these
    are the only entries the boundary equations read.  ``evaluations``
    counts the (source, target) pairs of the triangular sets filled while
    building the table.
    """

    s: int
    level_passage: tuple[np.ndarray, ...]
    evaluations: int
    full: dict | None = field(default=None, repr=False)

    def at_level(self, k: int) -> np.ndarray:
        return self.level_passage[k - 1]

    @property
    def Psi(self) -> np.ndarray:
        """(s+1) x (s+1) matrix of psi_(s,l)(s-1, j); row s is zero."""
        top = self.level_passage[self.s - 1]
        return np.vstack([top, np.zeros((1, self.s + 1))])


@dataclass(frozen=True)
class StationaryDistribution:
    """Normalized stationary distribution.

    Levels below s are in ``boundary``; level s is ``p_s``.  Above s the
    distribution is either geometric through ``rates`` (infinite buffer) or
    given level by level in ``tail`` (finite buffer, abandonments), one row
    per level s+1, s+2, ...
    """

    params: ModelParams
    boundary: tuple[np.ndarray, ...]
    p_s: np.ndarray
    normalizer: float
    rates: RateMatrices | None = None
    tail: np.ndarray | None = None

    @property
    def s(self) -> int:
        return self.params.s

    @property
    def _n_tail(self) -> int:
        return 0 if self.tail is None else len(self.tail)

    @property
    def max_level(self) -> int | None:
        return None if self.rates is not None else self.s + self._n_tail

    def level(self, i: int) -> np.ndarray:
        s = self.s
        if i < s:
            return self.boundary[i]
        if i == s:
            return self.p_s
        if self.rates is not None:
            return self.p_s @ np.linalg.matrix_power(self.rates.R, i - s)
        if i - s <= self._n_tail:
            return self.tail[i - s - 1]
        return np.zeros(s + 1)

    def prob(self, i: int, j: int) -> float:
        if j < 0 or j > min(i, self.s):
            return 0.0
        return float(self.level(i)[j])

    def levels(self, i_max: int) -> list[np.ndarray]:
        """Level vectors 0..i_max without repeated matrix powers."""
        out = list(self.boundary[: min(i_max + 1, self.s)])
        if i_max < self.s:
            return out
        vec = self.p_s
        out.append(vec)
        for i in range(self.s + 1, i_max + 1):
            if self.rates is not None:
                vec = vec @ self.rates.R
            else:
                vec = self.level(i)
            out.append(vec)
        return out

    def delay_probability(self) -> float:
        """P(L >= s), which by PASTA is the probability an arrival waits."""
        if self.rates is not None:
            return float(self.p_s @ self.rates.inv_I_minus_R.sum(axis=1))
        return float(self.p_s.sum() + (self.tail.sum() if self._n_tail else 0.0))

    def mean_queue(self) -> float:
        if self.rates is not None:
            inv = self.rates.inv_I_minus_R
            return float(self.p_s @ (self.rates.R @ inv @ inv).sum(axis=1))
        if not self._n_tail:
            return 0.0
        return float(np.arange(1, self._n_tail + 1) @ self.tail.sum(axis=1))

    def mean_busy_servers(self) -> float:
        below = sum(i * v.sum() for i, v in enumerate(self.boundary))
        return float(below + self.s * self.delay_probability())

    def total_mass(self) -> float:
        below = sum(v.sum() for v in self.boundary)
        return float(below + self.delay_probability())


# ---------------------------------------------------------------------------
# first-passage tables


def theta_table(params: ModelParams) -> ThetaTable:
    s, lam, mf, ms = params.s, params.lam, params.mu_fast, params.mu_slow
    blocks: list[np.ndarray] = []
    for j in range(s):
        n = s - j
        T = np.zeros((n, n))
        prev = blocks[j - 1] if j else None
        for a in range(n):
            # a = i - j delayed customers; landing index b = m - j - 1
            back = prev[a, a] if j else 0.0  # theta_0(i-1, j-1)
            denom = lam + a * ms + j * mf * (1.0 - back)
            T[a, a] = lam / denom
            if a:
                row = a * ms * T[a - 1, :a]
                if j:
                    row = row + j * mf * (prev[a, :a] @ T[:a, :a])
                T[a, :a] = row / denom
        blocks.append(T)
    return ThetaTable(s, tuple(blocks))


def psi_table(params: ModelParams, theta: ThetaTable, keep_all: bool = False) -> PsiTable:
    """First-passage probabilities to every boundary level.

    For a target level k the recursion runs phase by phase from k - 1 down
    to 0; at phase j it maps the passage probabilities of phase j + 1 states
    (levels j+1..k, where level k is the target itself) through the phase
    passage block of ``theta``.  Only targets l > j can be reached from
    phase j, so the columns are restricted accordingly.
    """
    s = params.s
    T = theta.blocks
    level_passage = []
    full = {} if keep_all else None
    evaluations = 0
    for k in range(1, s + 1):
        Pk = np.zeros((k, k + 1))
        # rows: levels j+1..k of phase j+1; columns: target phases j+1..k
        F = np.ones((1, 1))  # phase k at level k is the target (k, k)
        for j in range(k - 1, -1, -1):
            n = k - j
            block = _passage_product(T[j][:n, :n], F)  # rows: levels j..k-1, cols: l = j+1..k
            evaluations += n * (n + 1) // 2
            Pk[j, j + 1:] = block[n - 1]
            if keep_all:
                for a in range(n):
                    for c in range(n):
                        full[(k, j + 1 + c, j + a, j)] = block[a, c]
            F = np.zeros((n + 1, n + 1))
            F[:n, 1:] = block
            F[n, 0] = 1.0  # source already at (k, j): passage to (k, j) done
        level_passage.append(Pk)
    return PsiTable(s, tuple(level_passage), evaluations, full)


def _passage_product(T: np.ndarray, F: np.ndarray, cutoff: int = 48) -> np.ndarray:
    """T @ F for lower-triangular T and F with F[b, c] = 0 whenever b + c < n - 1.

    Both zero patterns survive in the diagonal quadrants, so the product is
    split recursively and the two all-zero quadrant products are skipped.
    """
    n = T.shape[0]
    if n <= cutoff:
        return T @ F
    h = n // 2
    w = n - h
    out = np.zeros((n, n))
    top = _passage_product(T[:h, :h], F[:h, w:], cutoff)
    out[:h, w:] = top
    out[h:, :w] = _passage_product(T[h:, h:], F[h:, :w], cutoff)
    out[h:, w:] = T[h:, :h] @ F[:h, w:] + T[h:, h:] @ F[h:, w:]
    return out


# ---------------------------------------------------------------------------
# level s and the lower levels


def gth_null_vector(Q: np.ndarray) -> np.ndarray:
    """Left null vector of a generator by Grassmann-Taksar-Heyman elimination.

    Only off-diagonal entries are used; the diagonal is implied by
    conservation.  States are eliminated from the last to the first and the
    returned vector has first entry 1.
    """
    A = np.array(Q, dtype=float)
    n = A.shape[0]
    np.fill_diagonal(A, 0.0)
    for k in range(n - 1, 0, -1):
        out = A[k, :k].sum()
        if out <= 0.0:
            raise NumericalError(f"state {k} has no exit to lower states", stage="gth")
        A[:k, k] /= out
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
        np.fill_diagonal(A[:k, :k], 0.0)
    x = np.zeros(n)
    x[0] = 1.0
    for k in range(1, n):
        x[k] = x[:k] @ A[:k, k]
    return x


def embedded_level_s_generator(
    blocks: GeneratorBlocks, G: np.ndarray, Psi: np.ndarray
) -> np.ndarray:
    return blocks.lambdam1 @ Psi + blocks.lambda0 + blocks.lambda1 @ G


def solve_level_s(blocks: GeneratorBlocks, G: np.ndarray, Psi: np.ndarray) -> np.ndarray:
    """Unnormalized level-s vector of the chain censored on level s."""
    M = embedded_level_s_generator(blocks, G, Psi)
    scale = np.maximum(1.0, np.abs(np.diag(M)))
    if np.any(np.abs(M.sum(axis=1)) > 1e-8 * scale):
        raise NumericalError(
            f"censored level-s generator is not conservative "
            f"(max row sum {np.max(np.abs(M.sum(axis=1)))!r})",
            stage="solve_level_s",
        )
    return gth_null_vector(M)


def backward_boundary(
    params: ModelParams, theta: ThetaTable, psi: PsiTable, p_s: np.ndarray
) -> list[np.ndarray]:
    """Unnormalized p(i, .) for i = s-1..0 from the censored balance equations."""
    s, lam, mf, ms = params.s, params.lam, params.mu_fast, params.mu_slow
    levels: list[np.ndarray] = [np.zeros(0)] * s
    upper = np.asarray(p_s, dtype=float)
    for i in range(s - 1, 0, -1):
        P = psi.at_level(i)  # P[m, l] = psi_(i,l)(i-1, m)
        p = np.zeros(i + 1)
        for j in range(i + 1):
            back = theta.blocks[j - 1][i - j, i - j] if j else 0.0
            denom = lam + (i - j) * ms + j * mf * (1.0 - back)
            rhs = upper[j] * (i + 1 - j) * ms + upper[j + 1] * (j + 1) * mf
            if j:
                k = np.arange(j)
                rhs += (p[:j] * (i - k) * ms) @ P[:j, j]
                if j > 1:
                    rhs += (p[1:j] * k[1:] * mf) @ P[: j - 1, j]
            p[j] = rhs / denom
        levels[i] = _checked(p, f"level {i}")
        upper = levels[i]
    if s >= 1:
        levels[0] = np.array([(upper[0] * ms + upper[1] * mf) / lam])
    return levels


def _checked(p: np.ndarray, where: str) -> np.ndarray:
    worst = p.min() / max(p.max(), np.finfo(float).tiny)
    if worst < -NEGATIVE_CLAMP:
        raise NumericalError(f"negative probability {worst!r} at {where}", stage="backward_boundary")
    return np.maximum(p, 0.0)


def normalize(
    params: ModelParams,
    boundary: list[np.ndarray],
    p_s: np.ndarray,
    rates: RateMatrices | None = None,
    tail: np.ndarray | None = None,
) -> StationaryDistribution:
    """Divide by the total mass: boundary levels plus p_s (I - R)^-1 1 or the explicit tail."""
    below = sum(float(v.sum()) for v in boundary)
    if rates is not None:
        above = float(p_s @ rates.inv_I_minus_R.sum(axis=1))
    else:
        above = float(p_s.sum()) + (float(tail.sum()) if tail is not None else 0.0)
    total = below + above
    if not (np.isfinite(total) and total > 0):
        raise NumericalError(f"total mass {total!r} is not positive", stage="normalize")
    return StationaryDistribution(
        params=params,
        boundary=tuple(v / total for v in boundary),
        p_s=p_s / total,
        normalizer=total,
        rates=rates,
        tail=None if tail is None else tail / total,
    )
