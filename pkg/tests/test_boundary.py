import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import psi_oracle, svd_null_vector, theta_oracle

from slowdown import boundary as bd
from slowdown.model import NumericalError, generator_blocks, params_from_loads
from slowdown.rate_matrices import rate_matrices


@pytest.fixture(scope="module")
def small():
    p = params_from_loads(6, 4.5, 0.55, 0.85)
    th = bd.theta_table(p)
    return p, th, bd.psi_table(p, th, keep_all=True)


def test_theta_against_absorption(small):
    p, th, _ = small
    worst = 0.0
    for i in range(p.s):
        for j in range(i + 1):
            for k in range(i - j + 1):
                worst = max(worst, abs(th(k, i, j) - theta_oracle(p, k, i, j)))
    assert worst < 1e-13


def test_theta_rows_sum_to_one(small):
    # phase j + 1 is entered eventually from any (i, j), i < s
    p, th, _ = small
    for i in range(p.s):
        for j in range(i + 1):
            assert sum(th(k, i, j) for k in range(i - j + 1)) == pytest.approx(1.0, abs=1e-13)


def test_theta_domain(small):
    _, th, _ = small
    with pytest.raises(IndexError):
        th(3, 2, 0)
    with pytest.raises(IndexError):
        th(0, 6, 0)


def test_psi_against_absorption(small):
    p, _, psi = small
    worst = 0.0
    for k in range(1, p.s + 1):
        P = psi.at_level(k)
        for m in range(k):
            for l in range(k + 1):
                worst = max(worst, abs(P[m, l] - psi_oracle(p, k, l, k - 1, m)))
    assert worst < 1e-13


def test_psi_full_table_against_absorption(small):
    p, _, psi = small
    checked = 0
    for (k, l, i, j), value in list(psi.full.items())[::5]:
        if not bd.in_triangle(k, l, i, j):
            assert value == 0.0  # (k, l) unreachable from outside its triangle
            continue
        assert value == pytest.approx(psi_oracle(p, k, l, i, j), abs=1e-13)
        checked += 1
    assert checked > 20


@pytest.mark.parametrize("s", [1, 2, 5, 9, 14])
def test_psi_evaluation_count(s):
    p = params_from_loads(s, float(s), 0.5, 0.9)
    psi = bd.psi_table(p, bd.theta_table(p))
    assert psi.evaluations == s * (s + 1) * (s + 2) * (s + 3) // 24


def test_passage_product_matches_dense():
    rng = np.random.default_rng(3)
    n = 130
    T = np.tril(rng.uniform(size=(n, n)))
    F = rng.uniform(size=(n, n))
    F[np.add.outer(np.arange(n), np.arange(n)) < n - 1] = 0.0
    assert np.allclose(bd._passage_product(T, F, cutoff=16), T @ F, rtol=1e-13, atol=1e-12)


@given(n=st.integers(2, 25), seed=st.integers(0, 10_000))
def test_gth_matches_svd(n, seed):
    rng = np.random.default_rng(seed)
    Q = rng.uniform(size=(n, n)) * (rng.uniform(size=(n, n)) < 0.6)
    Q[np.arange(n), np.roll(np.arange(n), 1)] += 0.1  # cycle: irreducible
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    x = bd.gth_null_vector(Q)
    x /= x.sum()
    assert np.all(x > 0)
    assert np.allclose(x, svd_null_vector(Q), rtol=1e-9, atol=1e-14)


def test_gth_reports_missing_exit():
    Q = np.array([[-1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(NumericalError):
        bd.gth_null_vector(Q)


def test_level_s_generator_is_conservative():
    p = params_from_loads(10, 10.0, 0.6, 0.95)
    b = generator_blocks(p)
    psi = bd.psi_table(p, bd.theta_table(p))
    M = bd.embedded_level_s_generator(b, rate_matrices(b, p).G, psi.Psi)
    assert np.max(np.abs(M.sum(axis=1))) < 1e-12 * np.max(np.abs(M))
    off = M - np.diag(np.diag(M))
    assert np.all(off >= 0)


def test_normalize_rejects_zero_mass():
    p = params_from_loads(2, 2.0, 0.5, 0.9)
    with pytest.raises(NumericalError):
        bd.normalize(p, [np.zeros(1), np.zeros(2)], np.zeros(3), tail=np.zeros((0, 3)))
