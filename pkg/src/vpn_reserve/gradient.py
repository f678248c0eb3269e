"""Average-reward optimization of parametrized logistic strategies by
simulation, with likelihood-ratio gradient updates and regenerative resets.

Raw action scores are logistics of the reservation sum against three
per-site thresholds; they do not sum to one, so the policy normalizes them
(and differentiates through the normalization).  Per update, theta moves along the stage-cost gradient plus the
likelihood-ratio eligibility term, the average-reward estimate follows a
convex-combination tracker, and the eligibility vector resets exactly on
entry to the recurrent state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import Chain, chain_cost_table, phi, vpn_stage_cost
from .errors import ConfigurationError, VpnReserveError
from .hierarchy import LinkModel, SatisfactionBounds, VpnUnit, aggregate_links, \
    satisfaction_check, vpn_flows
from .scenario_seed import derive_seed


def reservation_sums(chain: Chain) -> np.ndarray:
    """Per state, the summed phi reservations over the chain's flows."""
    n = len(chain)
    out = np.empty(n)
    for i in range(n):
        out[i] = sum(phi(x, p, chain.phi_form)
                     for x, p in zip(chain.flows[i], chain.prices))
    return out


def _raw_scores(phisum: float, theta: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(phisum - theta))


def policy_probabilities(chain: Chain, state: int, theta: np.ndarray,
                         phisums: np.ndarray | None = None) -> np.ndarray:
    """Normalized logistic action distribution at one state; all entries lie
    strictly inside (0, 1)."""
    phisums = reservation_sums(chain) if phisums is None else phisums
    raw = _raw_scores(phisums[state], np.asarray(theta, dtype=float))
    return raw / raw.sum()


def _policy_and_jacobian(phisum: float, theta: np.ndarray
                         ) -> tuple[np.ndarray, np.ndarray]:
    raw = _raw_scores(phisum, theta)
    total = raw.sum()
    f = raw / total
    slope = raw * (1.0 - raw) / total
    jac = slope[None, :] * (np.eye(3) - f[:, None])  # jac[i, j] = df_i / dtheta_j
    return f, jac


def parametrized_kernel_and_cost(chain: Chain, state: int, theta: np.ndarray,
                                 cost_table: np.ndarray | None = None,
                                 phisums: np.ndarray | None = None
                                 ) -> tuple[np.ndarray, float]:
    """Policy-averaged transition row and expected stage cost at one state."""
    cost_table = chain_cost_table(chain) if cost_table is None else cost_table
    phisums = reservation_sums(chain) if phisums is None else phisums
    f, _ = _policy_and_jacobian(phisums[state], np.asarray(theta, dtype=float))
    row = np.einsum("a,an->n", f, chain.kernels[:, state, :])
    expected_cost = float(f @ cost_table[state])
    return row, expected_cost


def parametrized_gradients(chain: Chain, state: int, theta: np.ndarray,
                           cost_table: np.ndarray | None = None,
                           phisums: np.ndarray | None = None
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Analytic (d p_theta(s, .) / d theta, d C(s, theta) / d theta)."""
    cost_table = chain_cost_table(chain) if cost_table is None else cost_table
    phisums = reservation_sums(chain) if phisums is None else phisums
    _, jac = _policy_and_jacobian(phisums[state], np.asarray(theta, dtype=float))
    dp = np.einsum("aj,an->jn", jac, chain.kernels[:, state, :])
    dc = jac.T @ cost_table[state]
    return dp, dc


@dataclass(frozen=True)
class PGState:
    """Stochastic-approximation state for one chain."""

    theta: np.ndarray
    lam: float
    z: np.ndarray
    t: int
    eta: float
    recurrent: int

    def __post_init__(self):
        if not 0 < self.eta <= 1.0:
            raise ConfigurationError(
                f"eta must lie in (0, 1] so eta/t stays a convex weight, got {self.eta}")


def gradient_step(pg: PGState, chain: Chain, x_t: int, x_next: int,
                  cost_table: np.ndarray, phisums: np.ndarray,
                  step_scale: float = 1.0) -> PGState:
    """One update of (theta, lambda, z) from the observed transition.

    The likelihood ratio uses the pre-update theta, matching the kernel the
    transition was sampled from; z resets exactly when the chain enters the
    recurrent state.
    """
    theta = pg.theta
    f, jac = _policy_and_jacobian(phisums[x_t], theta)
    cost_now = float(f @ cost_table[x_t])
    dc = jac.T @ cost_table[x_t]
    gamma_t = step_scale / pg.t
    new_theta = theta + gamma_t * (dc + (cost_now - pg.lam) * pg.z)
    new_lam = pg.lam + pg.eta * gamma_t * (cost_now - pg.lam)

    if x_next == pg.recurrent:
        new_z = np.zeros(3)
    else:
        kernel_col = chain.kernels[:, x_t, x_next]
        p = float(f @ kernel_col)
        if p <= 0.0:
            raise VpnReserveError(
                f"transition {x_t}->{x_next} has zero probability under theta")
        dp = jac.T @ kernel_col
        new_z = pg.z + dp / p
    return PGState(theta=new_theta, lam=new_lam, z=new_z, t=pg.t + 1,
                   eta=pg.eta, recurrent=pg.recurrent)


@dataclass
class PGRun:
    label: str
    states: np.ndarray
    theta_trace: np.ndarray
    lambda_trace: np.ndarray
    seed: int


def run_policy_gradient(chain: Chain, theta0: np.ndarray, eta: float, T_max: int,
                        seed: int, recurrent: int, step_scale: float = 1.0,
                        divergence_scale: float = 1e3) -> PGRun:
    """Simulate the chain under the current policy and update every epoch.

    The transition at epoch t is sampled under theta_t and the update then
    consumes it, so the likelihood ratio and the sampling kernel agree.
    Aborts if |theta| exceeds divergence_scale times its initial magnitude.
    """
    n = len(chain)
    if not 0 <= recurrent < n:
        raise ConfigurationError(f"recurrent state {recurrent} out of range")
    theta0 = np.asarray(theta0, dtype=float)
    cost_table = chain_cost_table(chain)
    phisums = reservation_sums(chain)
    rng = np.random.default_rng(seed)
    f0, _ = _policy_and_jacobian(phisums[recurrent], theta0)
    x = recurrent
    pg = PGState(theta=theta0.copy(), lam=float(f0 @ cost_table[recurrent]),
                 z=np.zeros(3), t=1, eta=eta, recurrent=recurrent)
    guard = divergence_scale * max(1.0, float(np.abs(theta0).max()))
    states = np.empty(T_max + 1, dtype=int)
    thetas = np.empty((T_max + 1, 3))
    lams = np.empty(T_max + 1)
    states[0], thetas[0], lams[0] = x, pg.theta, pg.lam
    for t in range(1, T_max + 1):
        row, _ = parametrized_kernel_and_cost(chain, x, pg.theta, cost_table, phisums)
        x_next = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
        x_next = min(x_next, n - 1)
        pg = gradient_step(pg, chain, x, x_next, cost_table, phisums, step_scale)
        if np.abs(pg.theta).max() > guard:
            raise VpnReserveError(
                f"policy-gradient divergence at epoch {t}: |theta| above {guard:.3g}")
        x = x_next
        states[t], thetas[t], lams[t] = x, pg.theta, pg.lam
    return PGRun(label=chain.label, states=states, theta_trace=thetas,
                 lambda_trace=lams, seed=seed)


@dataclass
class MplsPGRun:
    site_runs: dict[tuple[str, str], PGRun]
    link_theta_trace: np.ndarray   # (T+1, n_links, 3)
    link_lambda_trace: np.ndarray  # (T+1, n_links)
    regimes: list[str]
    seed: int


def run_policy_gradient_mpls(units: list[VpnUnit], routing: np.ndarray,
                             link_model: LinkModel, bounds: SatisfactionBounds,
                             theta0: dict[tuple[str, str], np.ndarray],
                             link_theta0: np.ndarray, eta: float, T_max: int,
                             seed: int, step_scale: float = 1.0) -> MplsPGRun:
    """Two-level variant: per-site updates while the bounds hold; when one is
    violated the site updates pause and the link-level systems (3 thresholds
    per link) update on a link chain evolving under its own parametrized
    kernel, seeded from the snapped loads at regime entry.  The VPN chains
    keep moving under the frozen thetas so the bounds can recover.

    The per-link recurrent state is the grid point nearest the load vector
    R (t_out 0 | t_out 0 | ...) of full first-flow allocations.
    """
    n_links = link_model.n_links()
    rng = np.random.default_rng(derive_seed(seed, "pg:mpls"))
    site_keys = [(u.name, site) for u in units for site in u.hose.sites]
    chains = {(u.name, site): u.chains()[site] for u in units for site in u.hose.sites}
    tables = {k: chain_cost_table(c) for k, c in chains.items()}
    sums = {k: reservation_sums(c) for k, c in chains.items()}
    link_chains = [link_model.chain(l) for l in range(n_links)]
    link_tables = [chain_cost_table(c) for c in link_chains]
    link_sums = [reservation_sums(c) for c in link_chains]

    full_first = np.concatenate([
        np.ravel([[unit.space.segments[site].t_out, 0.0] for site in unit.hose.sites])
        for unit in units])
    recurrent_loads = routing @ full_first
    link_recurrent = [link_model.nearest_state(l, recurrent_loads[l])
                      for l in range(n_links)]

    pgs = {}
    xs = {}
    for key in site_keys:
        chain = chains[key]
        rec = len(chain) - 1  # (t_out; 0) is the top grid state
        f0, _ = _policy_and_jacobian(sums[key][rec], np.asarray(theta0[key], float))
        pgs[key] = PGState(theta=np.asarray(theta0[key], float).copy(),
                           lam=float(f0 @ tables[key][rec]), z=np.zeros(3), t=1,
                           eta=eta, recurrent=rec)
        xs[key] = rec
    link_pgs = []
    link_xs = [0] * n_links
    for l in range(n_links):
        theta_l = np.asarray(link_theta0[l], dtype=float)
        f0, _ = _policy_and_jacobian(link_sums[l][link_recurrent[l]], theta_l)
        link_pgs.append(PGState(theta=theta_l.copy(),
                                lam=float(f0 @ link_tables[l][link_recurrent[l]]),
                                z=np.zeros(3), t=1, eta=eta,
                                recurrent=link_recurrent[l]))

    site_states = {k: np.empty(T_max + 1, dtype=int) for k in site_keys}
    site_thetas = {k: np.empty((T_max + 1, 3)) for k in site_keys}
    site_lams = {k: np.empty(T_max + 1) for k in site_keys}
    link_thetas = np.empty((T_max + 1, n_links, 3))
    link_lams = np.empty((T_max + 1, n_links))
    regimes = ["LOCAL"]
    prev_xs = dict(xs)
    in_global = False

    def record(t):
        for k in site_keys:
            site_states[k][t] = xs[k]
            site_thetas[k][t] = pgs[k].theta
            site_lams[k][t] = pgs[k].lam
        link_thetas[t] = [link_pgs[l].theta for l in range(n_links)]
        link_lams[t] = [link_pgs[l].lam for l in range(n_links)]

    record(0)
    for t in range(1, T_max + 1):
        costs = {}
        for u in units:
            x_now = {site: float(u.space.segments[site].x_first[xs[(u.name, site)]])
                     for site in u.hose.sites}
            x_prev = {site: float(u.space.segments[site].x_first[prev_xs[(u.name, site)]])
                      for site in u.hose.sites}
            costs[u.name] = vpn_stage_cost(u.hose, x_now, x_prev, u.prices)
        violated, _ = satisfaction_check(costs, bounds)
        regimes.append("GLOBAL" if violated else "LOCAL")
        prev_xs = dict(xs)

        if violated and not in_global:
            flows = [vpn_flows(u, {s: xs[(u.name, s)] for s in u.hose.sites})
                     for u in units]
            loads = aggregate_links(routing, flows)
            link_xs = [link_model.nearest_state(l, loads[l]) for l in range(n_links)]
        in_global = violated

        for key in site_keys:
            chain = chains[key]
            row, _ = parametrized_kernel_and_cost(chain, xs[key], pgs[key].theta,
                                                  tables[key], sums[key])
            nxt = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
            nxt = min(nxt, len(chain) - 1)
            if not violated:
                pgs[key] = gradient_step(pgs[key], chain, xs[key], nxt,
                                         tables[key], sums[key], step_scale)
            xs[key] = nxt
        if violated:
            for l in range(n_links):
                chain = link_chains[l]
                row, _ = parametrized_kernel_and_cost(chain, link_xs[l],
                                                      link_pgs[l].theta,
                                                      link_tables[l], link_sums[l])
                nxt = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
                nxt = min(nxt, len(chain) - 1)
                link_pgs[l] = gradient_step(link_pgs[l], chain, link_xs[l], nxt,
                                            link_tables[l], link_sums[l], step_scale)
                link_xs[l] = nxt
        record(t)

    site_runs = {k: PGRun(label=f"{k[0]}:{k[1]}", states=site_states[k],
                          theta_trace=site_thetas[k], lambda_trace=site_lams[k],
                          seed=seed) for k in site_keys}
    return MplsPGRun(site_runs=site_runs, link_theta_trace=link_thetas,
                     link_lambda_trace=link_lams, regimes=regimes, seed=seed)
