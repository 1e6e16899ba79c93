import csv

import numpy as np
import pytest

from slowdown.model import ModelParams, NumericalError, ParameterError, build_params, params_from_loads
from slowdown.sim_oracle import (
    SimConfig,
    coupled_paths,
    simulate,
    simulate_coupled,
    stream,
    truncated_generator_solve,
)
from slowdown.sim_oracle import truncated as tr
from slowdown.solver import solve_stationary
from slowdown.validation import per_state_relative_error
from slowdown.variants import AbandonmentParams, FiniteBufferParams, solve_abandonment, solve_finite_buffer


def test_config_validation():
    p = params_from_loads(3, 3.0, 0.5, 0.8)
    with pytest.raises(ParameterError):
        SimConfig(p, horizon=0.0)
    with pytest.raises(ParameterError):
        SimConfig(p, horizon=10.0, warmup=10.0)
    with pytest.raises(ParameterError):
        SimConfig(p, horizon=10.0, initial_state=(1, 2))
    assert SimConfig(p, horizon=50.0).effective_warmup == 5.0


def test_streams_are_named_and_reproducible():
    a = stream(1, 0, "arrivals").random(5)
    assert np.array_equal(a, stream(1, 0, "arrivals").random(5))
    assert not np.array_equal(a, stream(1, 0, "services").random(5))
    assert not np.array_equal(a, stream(1, 1, "arrivals").random(5))


def test_simulation_is_deterministic():
    cfg = SimConfig(params_from_loads(4, 4.0, 0.6, 0.9), horizon=2e4, seed=42, replications=3)
    assert simulate(cfg) == simulate(cfg)
    other = simulate(SimConfig(cfg.params, horizon=2e4, seed=43, replications=3))
    assert other.p_wait_hat != simulate(cfg).p_wait_hat


def test_no_arrivals_drains():
    p = ModelParams(3, 0.0, 2.0, 1.0)
    est = simulate(SimConfig(p, horizon=200.0, warmup=0.0, initial_state=(12, 2), record_path=True))
    x = est.sample_path.total_customers
    assert x[0] == 12 and x[-1] == 0
    assert np.all(np.diff(x) == -1)


def test_batch_interval_coverage():
    p = params_from_loads(5, 5.0, 0.6, 0.85)
    exact = solve_stationary(p)
    truth_w = exact.delay_probability()
    truth_l = exact.mean_queue() + exact.mean_busy_servers()
    hits_w = hits_l = 0
    n = 40
    for seed in range(n):
        est = simulate(SimConfig(p, horizon=2e4, seed=seed))
        hits_w += est.p_wait_hat.covers(truth_w)
        hits_l += est.mean_L_hat.covers(truth_l)
    assert hits_w >= 0.85 * n and hits_l >= 0.85 * n


def test_snowball_simulation_matches_exact(snowball):
    est = simulate(SimConfig(snowball, horizon=3e5, seed=5, replications=4))
    exact = solve_stationary(snowball)
    assert est.p_wait_hat.covers(exact.delay_probability(), 3)
    assert est.mean_L_hat.covers(exact.mean_queue() + exact.mean_busy_servers(), 3)


def test_variant_simulations_match_exact():
    fb = FiniteBufferParams(params_from_loads(6, 6.0, 0.8, 1.1), 20)
    est = simulate(SimConfig(fb, horizon=1e5, seed=2, replications=2))
    assert est.p_wait_hat.covers(solve_finite_buffer(fb).delay_probability(), 3)
    ab = AbandonmentParams(params_from_loads(6, 6.0, 0.8, 1.2), 0.3)
    est = simulate(SimConfig(ab, horizon=1e5, seed=2, replications=2))
    assert est.p_wait_hat.covers(solve_abandonment(ab).delay_probability(), 3)


def test_long_excursions_occur(snowball):
    longest = [simulate(SimConfig(snowball, horizon=1e4, seed=k, warmup=0.0)).busy_period_stats.max_length
               for k in range(20)]
    assert max(longest) > 300


def test_sample_path_csv(tmp_path):
    p = params_from_loads(3, 3.0, 0.5, 0.8)
    est = simulate(SimConfig(p, horizon=50.0, seed=1, record_path=True))
    out = tmp_path / "path.csv"
    est.sample_path.to_csv(out)
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["time", "total_customers", "nondelayed_in_service"]
    assert len(rows) == len(est.sample_path.time) + 1
    x = np.array([int(r[1]) for r in rows[1:]])
    y = np.array([int(r[2]) for r in rows[1:]])
    assert np.all(y <= np.minimum(x, 3)) and np.all(np.abs(np.diff(x)) == 1)


@pytest.mark.parametrize("rf,rs", [(0.5, 0.8), (0.7, 0.9), (0.95, 0.99), (0.6, 0.98)])
def test_coupling_has_no_violations(rf, rs):
    rep = simulate_coupled(SimConfig(params_from_loads(10, 10.0, rf, rs), horizon=1.0,
                                     customers=20_000, seed=4, replications=5))
    assert rep.customers_checked == 100_000
    assert rep.total_violations == 0
    assert rep.max_violation_magnitude == 0.0


def test_degenerate_coupling_paths_coincide():
    p = build_params(4, 3.0, 1.0 * (1 + 1e-12), 1.0)
    _, ((ws, ds), (w, d), (wf, df)) = coupled_paths(p, 5000, seed=8)
    assert np.allclose(ws, wf, rtol=1e-8, atol=1e-8)
    assert np.allclose(w, ws, rtol=1e-8, atol=1e-8)


def test_coupling_requires_base_model():
    fb = FiniteBufferParams(params_from_loads(3, 3.0, 0.5, 0.8), 5)
    with pytest.raises(ParameterError):
        simulate_coupled(SimConfig(fb, horizon=1.0, customers=10))


def test_truncated_single_server():
    p = build_params(1, 0.5, 1.5, 1.0)
    oracle = truncated_generator_solve(p)
    top = (oracle.max_level + 1) // 2
    assert per_state_relative_error(solve_stationary(p), oracle, top) <= 1e-10


def test_truncated_tolerance_insensitive():
    p = params_from_loads(3, 3.0, 0.6, 0.9)
    fine = truncated_generator_solve(p, tail_tol=1e-13).delay_probability()
    coarse = truncated_generator_solve(p, tail_tol=1e-10).delay_probability()
    assert abs(fine - coarse) <= 1e-10


def test_truncated_state_cap(monkeypatch):
    monkeypatch.setattr(tr, "MAX_STATES", 100)
    with pytest.raises(NumericalError):
        truncated_generator_solve(params_from_loads(5, 5.0, 0.6, 0.9))


def test_truncated_rejects_unstable():
    with pytest.raises(ParameterError):
        truncated_generator_solve(params_from_loads(3, 3.0, 0.6, 1.2))


def test_banded_gth_matches_dense():
    p = params_from_loads(3, 3.0, 0.6, 0.9)
    top = 12
    offsets = tr.level_offsets(3, top)
    w = 5
    band = tr._fill_band(3, p.lam, p.mu_fast, p.mu_slow, top, 0.0, offsets, w)
    n = band.shape[0]
    Q = np.zeros((n, n))
    for a in range(n):
        for d in range(2 * w + 1):
            b = a + d - w
            if 0 <= b < n and band[a, d]:
                Q[a, b] = band[a, d]
    np.fill_diagonal(Q, -Q.sum(axis=1))
    x = tr.gth_banded(band.copy(), w)
    assert np.max(np.abs(x @ Q)) < 1e-15
    assert x.sum() == pytest.approx(1.0)
