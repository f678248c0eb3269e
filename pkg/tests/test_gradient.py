import numpy as np
import pytest

from vpn_reserve.costs import chain_cost_table, segment_chain
from vpn_reserve.errors import ConfigurationError, VpnReserveError
from vpn_reserve.gradient import (
    PGState,
    gradient_step,
    parametrized_gradients,
    parametrized_kernel_and_cost,
    policy_probabilities,
    reservation_sums,
    run_policy_gradient,
    run_policy_gradient_mpls,
)
from vpn_reserve.hierarchy import SatisfactionBounds, build_link_mdp
from vpn_reserve.hose import build_state_space, build_transition_model

from conftest import three_site_hose, uniform_prices
from test_hierarchy import link_prices, make_units


def make_chain(alpha=3.0, seed=2):
    hose = three_site_hose((9.0, 9.0, 9.0))
    space = build_state_space(hose, alpha)
    model = build_transition_model(space, 1.0, 1.0, seed)
    return segment_chain(space.segments["1"], model, uniform_prices())


def test_logistic_midpoint_gives_uniform_policy():
    chain = make_chain()
    sums = reservation_sums(chain)
    theta = np.full(3, sums[1])
    f = policy_probabilities(chain, 1, theta)
    assert np.allclose(f, 1.0 / 3.0, atol=1e-12)


def test_raw_score_threshold_equivalence():
    chain = make_chain()
    sums = reservation_sums(chain)
    from vpn_reserve.gradient import _raw_scores

    for state in range(len(chain)):
        for margin in (-2.0, -0.1, 0.1, 2.0):
            theta = np.array([sums[state] + margin, 0.0, 0.0])
            raw = _raw_scores(sums[state], theta)
            assert (raw[0] >= 0.5) == (sums[state] <= theta[0])


def test_large_threshold_maximizes_stay_probability():
    chain = make_chain()
    theta = np.array([40.0, 5.0, 5.0])
    f = policy_probabilities(chain, 2, theta)
    assert f[0] == max(f)
    assert np.all((f > 0) & (f < 1))


def test_policy_rows_normalized_everywhere():
    chain = make_chain()
    rng = np.random.default_rng(8)
    for _ in range(50):
        theta = rng.normal(10.0, 6.0, size=3)
        for s in range(len(chain)):
            f = policy_probabilities(chain, s, theta)
            assert abs(f.sum() - 1.0) < 1e-12
            row, cost = parametrized_kernel_and_cost(chain, s, theta)
            assert abs(row.sum() - 1.0) < 1e-12
            assert np.isfinite(cost)


def test_concentrated_theta_gives_identity_like_kernel():
    chain = make_chain()
    theta = np.array([60.0, -60.0, -60.0])  # stay score ~1, jump scores ~0
    for s in range(len(chain)):
        row, _ = parametrized_kernel_and_cost(chain, s, theta)
        assert row[s] > 0.999


def test_analytic_gradients_match_central_differences():
    chain = make_chain()
    cost = chain_cost_table(chain)
    sums = reservation_sums(chain)
    rng = np.random.default_rng(3)
    h = 1e-4
    for _ in range(100):
        s = int(rng.integers(len(chain)))
        theta = rng.normal(12.0, 5.0, size=3)
        dp, dc = parametrized_gradients(chain, s, theta, cost, sums)
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            row_hi, cost_hi = parametrized_kernel_and_cost(chain, s, theta + e, cost, sums)
            row_lo, cost_lo = parametrized_kernel_and_cost(chain, s, theta - e, cost, sums)
            fd_row = (row_hi - row_lo) / (2 * h)
            fd_cost = (cost_hi - cost_lo) / (2 * h)
            scale = max(1.0, np.abs(dp[j]).max())
            assert np.abs(dp[j] - fd_row).max() / scale < 1e-5
            assert abs(dc[j] - fd_cost) / max(1.0, abs(dc[j])) < 1e-5


def test_z_resets_on_recurrent_entry():
    chain = make_chain()
    cost = chain_cost_table(chain)
    sums = reservation_sums(chain)
    pg = PGState(theta=np.array([12.0, 10.0, 8.0]), lam=1.0,
                 z=np.array([0.4, -0.2, 0.1]), t=5, eta=0.1, recurrent=3)
    stepped = gradient_step(pg, chain, 2, 3, cost, sums)
    assert np.array_equal(stepped.z, np.zeros(3))
    moved = gradient_step(pg, chain, 2, 1, cost, sums)
    assert not np.array_equal(moved.z, pg.z)
    assert moved.t == 6


def test_null_update_when_cost_matches_lambda_and_z_zero():
    chain = make_chain()
    cost = chain_cost_table(chain)
    sums = reservation_sums(chain)
    theta = np.array([9.0, 11.0, 13.0])
    from vpn_reserve.gradient import _policy_and_jacobian

    f, jac = _policy_and_jacobian(sums[1], theta)
    cost_now = float(f @ cost[1])
    dc = jac.T @ cost[1]
    pg = PGState(theta=theta, lam=cost_now, z=np.zeros(3), t=4, eta=0.1, recurrent=0)
    stepped = gradient_step(pg, chain, 1, 2, cost, sums)
    assert np.allclose(stepped.theta, theta + (1.0 / 4.0) * dc)
    # with a zero gradient direction nothing moves at all
    frozen = gradient_step(pg, chain, 1, 2, cost, sums, step_scale=0.0)
    assert np.array_equal(frozen.theta, theta)
    assert frozen.lam == cost_now


def test_eta_validation():
    with pytest.raises(ConfigurationError):
        PGState(theta=np.zeros(3), lam=0.0, z=np.zeros(3), t=1, eta=1.5, recurrent=0)


def test_run_frozen_scale_keeps_everything_constant():
    chain = make_chain()
    run = run_policy_gradient(chain, theta0=np.array([12.0, 12.0, 12.0]), eta=0.1,
                              T_max=50, seed=4, recurrent=3, step_scale=0.0)
    assert np.all(run.theta_trace == run.theta_trace[0])
    assert np.all(run.lambda_trace == run.lambda_trace[0])


def test_run_seed_determinism_and_variation():
    chain = make_chain()
    kwargs = dict(theta0=np.array([12.0, 10.0, 8.0]), eta=0.1, T_max=200,
                  seed=7, recurrent=3)
    a = run_policy_gradient(chain, **kwargs)
    b = run_policy_gradient(chain, **kwargs)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.theta_trace, b.theta_trace)
    c = run_policy_gradient(chain, **{**kwargs, "seed": 8})
    assert not np.array_equal(a.states, c.states)


def test_lambda_stays_in_visited_cost_hull():
    chain = make_chain()
    cost = chain_cost_table(chain)
    run = run_policy_gradient(chain, theta0=np.array([14.0, 9.0, 11.0]), eta=0.5,
                              T_max=400, seed=9, recurrent=3)
    lo, hi = cost.min(), cost.max()
    assert np.all(run.lambda_trace >= lo - 1e-9)
    assert np.all(run.lambda_trace <= hi + 1e-9)


def test_z_is_zero_after_every_recurrent_visit():
    chain = make_chain()
    cost = chain_cost_table(chain)
    sums = reservation_sums(chain)
    rng = np.random.default_rng(12)
    pg = PGState(theta=np.array([12.0, 10.0, 8.0]), lam=1.0, z=np.zeros(3),
                 t=1, eta=0.1, recurrent=2)
    x = 0
    for _ in range(300):
        row, _ = parametrized_kernel_and_cost(chain, x, pg.theta, cost, sums)
        nxt = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
        nxt = min(nxt, len(chain) - 1)
        pg = gradient_step(pg, chain, x, nxt, cost, sums)
        if nxt == 2:
            assert np.array_equal(pg.z, np.zeros(3))
        x = nxt


def test_divergence_guard_fires():
    chain = make_chain()
    with pytest.raises(VpnReserveError):
        run_policy_gradient(chain, theta0=np.array([12.0, 10.0, 8.0]), eta=0.1,
                            T_max=100, seed=5, recurrent=3, divergence_scale=1e-6)


def test_mpls_variant_pauses_site_updates_during_violation():
    units = make_units(alpha=3.0, seed=6)
    from test_hierarchy import reference_routing

    routing = reference_routing()
    link_model = build_link_mdp(routing, units, 3.0, 1.0, 1.0, link_prices(), seed=3)
    bounds = SatisfactionBounds({"X": 13.0, "Y": 13.0, "Z": 13.0})
    theta0 = {(u.name, site): np.array([16.0, 16.0, 16.0])
              for u in units for site in u.hose.sites}
    link_theta0 = np.full((12, 3), 20.0)
    run = run_policy_gradient_mpls(units, routing, link_model, bounds, theta0,
                                   link_theta0, eta=0.1, T_max=120, seed=10)
    assert run.link_theta_trace.shape == (121, 12, 3)  # 3*12 = 36 parameters
    regimes = np.array(run.regimes)
    assert {"LOCAL", "GLOBAL"} == set(regimes)
    key = ("X", "1")
    thetas = run.site_runs[key].theta_trace
    for t in range(1, 121):
        if regimes[t] == "GLOBAL":
            assert np.array_equal(thetas[t], thetas[t - 1])
    # link parameters only move on global epochs
    for t in range(1, 121):
        if regimes[t] == "LOCAL":
            assert np.array_equal(run.link_theta_trace[t], run.link_theta_trace[t - 1])
        else:
            assert not np.array_equal(run.link_theta_trace[t], run.link_theta_trace[t - 1])
