import functools

import pytest
from hypothesis import HealthCheck, settings

from slowdown import params_from_loads, solve_stationary

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@functools.lru_cache(maxsize=None)
def cached_solve(s, lam, rho_fast, rho_slow):
    return solve_stationary(params_from_loads(s, lam, rho_fast, rho_slow))


@pytest.fixture
def snowball():
    """s = 15 with strong slowdown: rho_fast 0.7, rho_slow 0.98."""
    return params_from_loads(15, 15.0, 0.7, 0.98)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
