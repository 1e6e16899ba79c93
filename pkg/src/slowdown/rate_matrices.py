"""Explicit rate matrix R, first-passage matrix G and (I - R)^-1.

Every block of the inner levels is lower triangular, so R is too.  The
diagonal of R solves a scalar quadratic per phase and each subdiagonal
entry solves a linear equation in entries of lower order, which gives R in
closed form without iterating the matrix equation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ErgodicityError, GeneratorBlocks, ModelParams, NumericalError

_DENOM_FLOOR = 1e-14


@dataclass(frozen=True)
class RateMatrices:
    R: np.ndarray
    G: np.ndarray
    inv_I_minus_R: np.ndarray


def _min_root(a: float, b: float, c: float) -> float:
    """Smaller root of a r^2 - b r + c = 0 written without cancellation."""
    disc = max(b * b - 4.0 * a * c, 0.0)
    return 2.0 * c / (b + np.sqrt(disc))


def compute_R(blocks: GeneratorBlocks, params: ModelParams) -> np.ndarray:
    """Minimal nonnegative solution of L1 + R L0 + R^2 Lm1 = 0.

    Diagonal entries are the minimal roots in (0, 1); subdiagonals are
    swept by distance ``h = i - j`` so each entry only references entries
    that are already known.
    """
    if not params.lam < params.s * params.mu_slow:
        raise ErgodicityError(
            f"rate matrix R requires rho_slow < 1 (rho_slow={params.rho_slow!r})"
        )
    s, lam = params.s, params.lam
    slow = np.diag(blocks.lambdam1).copy()  # (s - j) mu_slow
    fast_up = np.append(np.diag(blocks.lambdam1, k=-1), 0.0)  # (j + 1) mu_fast
    out = -np.diag(blocks.lambda0)  # lam + (s - j) mu_slow + j mu_fast

    R = np.zeros((s + 1, s + 1))
    for j in range(s):
        R[j, j] = _min_root(slow[j], out[j], lam)
    R[s, s] = lam / out[s]

    for h in range(1, s + 1):
        for i in range(h, s + 1):
            j = i - h
            # sum_{k=j+1}^{i-1} R[i,k] R[k,j]  and  sum_{k=j+1}^{i} R[i,k] R[k,j+1]
            via_slow = R[i, j + 1:i] @ R[j + 1:i, j]
            via_fast = R[i, j + 1:i + 1] @ R[j + 1:i + 1, j + 1]
            denom = out[j] - (R[i, i] + R[j, j]) * slow[j]
            if abs(denom) <= _DENOM_FLOOR:
                raise NumericalError(
                    f"degenerate parameters: denominator {denom!r} at R[{i},{j}]",
                    stage="compute_R",
                )
            R[i, j] = (via_slow * slow[j] + via_fast * fast_up[j]) / denom
    return R


def compute_G(blocks: GeneratorBlocks, R: np.ndarray) -> np.ndarray:
    """G = L1^-1 R Lm1; L1 is a multiple of the identity."""
    lam = blocks.lambda1[0, 0]
    return (R @ blocks.lambdam1) / lam


def invert_I_minus_R(R: np.ndarray) -> np.ndarray:
    """Inverse of the lower-triangular I - R by forward substitution."""
    n = R.shape[0]
    A = np.eye(n) - R
    diag = np.diag(A)
    if np.any(diag <= _DENOM_FLOOR):
        raise NumericalError(
            "I - R is numerically singular (rho_slow too close to 1)",
            stage="invert_I_minus_R",
        )
    inv = np.zeros_like(A)
    for i in range(n):
        inv[i, i] = 1.0 / diag[i]
        if i:
            inv[i, :i] = -(A[i, :i] @ inv[:i, :i]) / diag[i]
    return inv


def rate_matrices(blocks: GeneratorBlocks, params: ModelParams) -> RateMatrices:
    R = compute_R(blocks, params)
    return RateMatrices(R, compute_G(blocks, R), invert_I_minus_R(R))


def iterate_R(
    blocks: GeneratorBlocks, tol: float = 1e-13, max_iter: int = 2_000_000
) -> np.ndarray:
    """Generic QBD fixed point R <- -(L1 + R^2 Lm1) L0^-1 started at zero.

    Independent of the closed form above; only used as a cross-check.
    Convergence is linear with rate close to rho_slow.
    """
    inv0 = np.linalg.inv(blocks.lambda0)
    R = np.zeros_like(blocks.lambda0)
    for _ in range(max_iter):
        nxt = -(blocks.lambda1 + R @ R @ blocks.lambdam1) @ inv0
        if np.max(np.abs(nxt - R)) < tol:
            return nxt
        R = nxt
    raise NumericalError("fixed-point iteration for R did not converge", stage="iterate_R")


def quadratic_residual(blocks: GeneratorBlocks, R: np.ndarray) -> float:
    """||L1 + R L0 + R^2 Lm1||_inf / ||L0||_inf."""
    res = blocks.lambda1 + R @ blocks.lambda0 + R @ R @ blocks.lambdam1
    return float(np.linalg.norm(res, np.inf) / np.linalg.norm(blocks.lambda0, np.inf))
