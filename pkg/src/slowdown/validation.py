"""Self-checks run by ``slowdown validate``.

Each check returns a :class:`CheckResult`; a tier is a list of checks.
The quick tier stays well under a minute; the full tier adds the large
solves, the full staffing table and the 100-seed coupling run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import build_params, generator_blocks, params_from_loads
from .qed import QedParams, System, drift_sup_error, qed_convergence_table
from .rate_matrices import iterate_R, quadratic_residual, rate_matrices
from .sim_oracle import SimConfig, simulate_coupled, truncated_generator_solve
from .solver import dimension_servers, erlang_c, marginal_total, mms_mean_queue, solve_stationary
from .variants import AbandonmentParams, FiniteBufferParams, find_modes, solve_abandonment, solve_finite_buffer

# (mu_fast, mu_slow, lambda, target, s_fast, s_slowdown)
STAFFING_TABLE = [
    (1, 0.9, 10, 0.1, 16, 16), (1, 0.9, 12, 0.1, 18, 18), (1, 0.9, 15, 0.1, 22, 22), (1, 0.9, 20, 0.1, 27, 28),
    (1, 0.9, 10, 0.5, 12, 13), (1, 0.9, 12, 0.5, 14, 15), (1, 0.9, 15, 0.5, 18, 19), (1, 0.9, 20, 0.5, 23, 24),
    (1, 0.7, 10, 0.1, 16, 17), (1, 0.7, 12, 0.1, 18, 19), (1, 0.7, 15, 0.1, 22, 23), (1, 0.7, 20, 0.1, 27, 30),
    (1, 0.7, 10, 0.5, 12, 15), (1, 0.7, 12, 0.5, 14, 18), (1, 0.7, 15, 0.5, 18, 22), (1, 0.7, 20, 0.5, 23, 29),
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


def per_state_relative_error(a, b, top: int, floor: float = 1e-200) -> float:
    """Largest relative difference over states at levels 0..top with mass above ``floor``."""
    worst = 0.0
    for i in range(top + 1):
        x, y = a.level(i), b.level(i)
        mask = np.abs(y) > floor
        if mask.any():
            worst = max(worst, float(np.max(np.abs(x[mask] - y[mask]) / np.abs(y[mask]))))
    return worst


def comparison_top(oracle) -> int:
    """Levels compared against the truncated oracle: up to halfway to its top."""
    s = oracle.s
    return s + (oracle.max_level - s) // 2


def random_stable_params(rng: np.random.Generator, s: int):
    rho_fast = rng.uniform(0.2, 0.9)
    rho_slow = rng.uniform(rho_fast + 0.02, 0.95)
    lam = s * rng.uniform(0.5, 2.0)
    return params_from_loads(s, lam, rho_fast, rho_slow)


# --------------------------------------------------------------------------
# checks


def check_residuals(s_values) -> tuple[bool, str]:
    worst_res, worst_g = 0.0, 0.0
    for s in s_values:
        p = params_from_loads(s, float(s), 0.7, 0.95)
        rm = rate_matrices(generator_blocks(p), p)
        worst_res = max(worst_res, quadratic_residual(generator_blocks(p), rm.R))
        worst_g = max(worst_g, float(np.max(np.abs(rm.G.sum(axis=1) - 1.0))))
    return worst_res <= 1e-12 and worst_g <= 1e-10, f"residual {worst_res:.2e}, G row sums {worst_g:.2e}"


def check_iterate_R() -> tuple[bool, str]:
    p = params_from_loads(5, 5.0, 0.6, 0.8)
    blocks = generator_blocks(p)
    diff = float(np.max(np.abs(rate_matrices(blocks, p).R - iterate_R(blocks))))
    return diff <= 1e-10, f"max |R - R_iter| {diff:.2e}"


def check_oracle(s_values, sets_per_s: int, seed: int = 2024) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for s in s_values:
        for _ in range(sets_per_s):
            p = random_stable_params(rng, s)
            oracle = truncated_generator_solve(p)
            worst = max(worst, per_state_relative_error(solve_stationary(p), oracle, comparison_top(oracle)))
    return worst <= 1e-9, f"max per-state relative error {worst:.2e}"


def check_reduction(n_sets: int = 10, seed: int = 7) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_sets):
        s = int(rng.integers(1, 30))
        mu = rng.uniform(0.5, 2.0)
        lam = s * mu * rng.uniform(0.3, 0.95)
        dist = solve_stationary(build_params(s, lam, mu * (1 + 1e-9), mu))
        pw, lq = erlang_c(s, lam / mu), mms_mean_queue(s, lam, mu)
        worst = max(worst, abs(dist.delay_probability() / pw - 1), abs(dist.mean_queue() / lq - 1))
    return worst <= 1e-6, f"max relative gap to M/M/s {worst:.2e}"


def check_staffing(rows) -> tuple[bool, str]:
    misses = []
    for mf, ms, lam, target, s_fast, s_slow in rows:
        got = dimension_servers(mf, ms, lam, target)
        if got != (s_fast, s_slow):
            misses.append(f"{(mf, ms, lam, target)} -> {got}")
    return not misses, f"{len(rows) - len(misses)}/{len(rows)} rows" + (f"; {misses}" if misses else "")


def check_coupling(seeds: int, customers: int) -> tuple[bool, str]:
    p = params_from_loads(15, 15.0, 0.7, 0.98)
    rep = simulate_coupled(SimConfig(p, horizon=1.0, customers=customers, seed=11, replications=seeds))
    return rep.total_violations == 0, f"{rep.customers_checked} customers, {rep.total_violations} violations"


def check_qed(s_values) -> tuple[bool, str]:
    q = QedParams(0.5, 0.5)
    rows = qed_convergence_table(q, s_values)
    ok = all(r.p_wait_fast <= r.p_wait_slowdown <= r.p_wait_slow for r in rows)
    ok &= all(0.1 < v < 0.7 for r in rows for v in (r.p_wait_fast, r.p_wait_slowdown, r.p_wait_slow))
    gaps_f = [abs(r.p_wait_fast - r.lower) for r in rows]
    gaps_s = [abs(r.p_wait_slow - r.upper) for r in rows]
    ok &= all(np.diff(gaps_f) < 0) and all(np.diff(gaps_s) < 0)
    return ok, "slowdown " + ", ".join(f"{r.p_wait_slowdown:.4f}" for r in rows)


def check_drift() -> tuple[bool, str]:
    q = QedParams(0.5, 0.5)
    ratios = []
    for system in System:
        errs = [drift_sup_error(system, q, s) for s in (10**2, 10**4, 10**6)]
        for k in range(2):
            ratios += [errs[k][0] / errs[k + 1][0], errs[k][1] / errs[k + 1][1]]
    return min(ratios) >= 8, f"smallest decrease factor {min(ratios):.2f}"


def check_finite_buffer() -> tuple[bool, str]:
    fb = FiniteBufferParams(params_from_loads(5, 5.0, 0.7, 0.9), 40)
    err = per_state_relative_error(solve_finite_buffer(fb), truncated_generator_solve(fb), 40)
    return err <= 1e-9, f"max per-state relative error {err:.2e}"


def check_abandonment() -> tuple[bool, str]:
    ab = AbandonmentParams(params_from_loads(3, 3.0, 0.6, 0.8), 0.5)
    oracle = truncated_generator_solve(ab)
    err = per_state_relative_error(solve_abandonment(ab), oracle, comparison_top(oracle))
    return err <= 1e-9, f"max per-state relative error {err:.2e}"


def bistable_finite_buffer(rho_slow_grid=np.linspace(1.0, 1.1, 11)):
    """Loads rho_slow in the scan whose marginal has exactly two modes."""
    hits = []
    for rs in rho_slow_grid:
        fb = FiniteBufferParams(params_from_loads(81, 81.0, 0.8, float(rs)), 93)
        if len(find_modes(marginal_total(solve_finite_buffer(fb), 93))) == 2:
            hits.append(float(rs))
    return hits


def bistable_abandonment(fractions=np.linspace(1 / 8, 1 / 2, 7)):
    """Abandonment rates delta / mu_slow in the scan with exactly two modes."""
    base = params_from_loads(36, 36.0, 0.7, 1.2)
    hits = []
    for frac in fractions:
        dist = solve_abandonment(AbandonmentParams(base, float(frac) * base.mu_slow))
        if len(find_modes(marginal_total(dist))) == 2:
            hits.append(float(frac))
    return hits


def check_bistability() -> tuple[bool, str]:
    fb, ab = bistable_finite_buffer(), bistable_abandonment()
    return bool(fb) and bool(ab), f"finite buffer rho_slow {fb}; abandonment delta/mu_slow {ab}"


def checks_for(tier: str) -> list[tuple[str, Callable[[], tuple[bool, str]]]]:
    quick = [
        ("rate matrix residuals s<=50", lambda: check_residuals([1, 15, 50])),
        ("closed-form R vs fixed point", check_iterate_R),
        ("truncated oracle s in 1..8", lambda: check_oracle([1, 2, 3, 5, 8], 1)),
        ("M/M/s reduction", check_reduction),
        ("staffing table (first rows)", lambda: check_staffing(STAFFING_TABLE[:2])),
        ("coupling 5 seeds", lambda: check_coupling(5, 10_000)),
        ("QED sandwich s<=100", lambda: check_qed([25, 50, 100])),
        ("drift convergence", check_drift),
        ("finite buffer vs oracle", check_finite_buffer),
        ("abandonment vs oracle", check_abandonment),
    ]
    if tier == "quick":
        return quick
    if tier == "full":
        return quick + [
            ("rate matrix residuals s=200", lambda: check_residuals([200])),
            ("truncated oracle 20 sets", lambda: check_oracle([1, 2, 3, 5, 8], 4)),
            ("staffing table (all rows)", lambda: check_staffing(STAFFING_TABLE)),
            ("coupling 100 seeds", lambda: check_coupling(100, 100_000)),
            ("QED sandwich s<=400", lambda: check_qed([25, 50, 100, 200, 400])),
            ("bistability scans", check_bistability),
        ]
    raise ValueError(f"unknown tier {tier!r}")


def run_tier(tier: str, progress: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    results = []
    for name, fn in checks_for(tier):
        res = _timed(name, fn)
        results.append(res)
        if progress is not None:
            progress(res)
    return results
