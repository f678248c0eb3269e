"""Hierarchical control of several VPNs over one MPLS network.

Each VPN runs its own per-segment worst-case MDP; a link-level MDP covers the
shared infrastructure.  Decisions stay local while every VPN's stage cost
respects its satisfaction bound; one violation switches control to the links
until all bounds hold again.  Global steps move link states, and the
resulting link reservations are pushed back down to per-VPN states through
the Cross-Entropy decomposition followed by the inverse reservation map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bellman import SegmentSolution
from .ce import CEResult, run_ce
from .costs import Chain, PriceTable, link_stage_cost, phi, phi_inverse, segment_chain, \
    vpn_stage_cost
from .errors import ConfigurationError, DecompositionError
from .hose import DiscreteStateSpace, HoseSpec, TransitionModel, sample_motion_kernels
from .scenario_seed import derive_seed


@dataclass(frozen=True)
class VpnUnit:
    """One VPN's hose declaration with its discretized model and prices."""

    name: str
    hose: HoseSpec
    space: DiscreteStateSpace
    model: TransitionModel
    prices: PriceTable

    def chains(self) -> dict[str, Chain]:
        return {site: segment_chain(seg, self.model, self.prices)
                for site, seg in self.space.segments.items()}

    def flow_prices(self) -> np.ndarray:
        out = []
        for site in self.hose.sites:
            d1, d2 = self.hose.destinations(site)
            out.extend((self.prices.p[(site, d1)], self.prices.p[(site, d2)]))
        return np.asarray(out)


@dataclass(frozen=True)
class SatisfactionBounds:
    bounds: dict[str, float]

    def __post_init__(self):
        for name, value in self.bounds.items():
            if value <= 0:
                raise ConfigurationError(f"satisfaction bound for {name} must be positive")


def vpn_flows(unit: VpnUnit, state_indices: dict[str, int]) -> np.ndarray:
    """Expand per-site states to the VPN's six directed flows, exactly."""
    out = []
    for site in unit.hose.sites:
        seg = unit.space.segments[site]
        i = state_indices[site]
        out.extend((seg.x_first[i], seg.x_rest[i]))
    return np.asarray(out)


def aggregate_links(routing: np.ndarray, flows_by_vpn: list[np.ndarray]) -> np.ndarray:
    """Link loads l = R (x | y | z) as an exact matrix product."""
    stacked = np.concatenate(flows_by_vpn)
    if routing.shape[1] != stacked.shape[0]:
        raise ConfigurationError(
            f"routing expects {routing.shape[1]} flows, got {stacked.shape[0]}")
    return routing @ stacked


def satisfaction_check(vpn_costs: dict[str, float],
                       bounds: SatisfactionBounds) -> tuple[bool, dict[str, bool]]:
    """Violated iff any VPN cost strictly exceeds its bound (<= satisfies)."""
    flags = {name: cost > bounds.bounds[name] for name, cost in vpn_costs.items()}
    return any(flags.values()), flags


@dataclass(frozen=True)
class LinkModel:
    """Per-link load grids and frozen jump kernels for the global MDP."""

    values: list[np.ndarray]
    kernels: list[np.ndarray]
    prices: PriceTable
    alpha: float
    nu1: float
    nu2: float
    seed: int

    def chain(self, link: int) -> Chain:
        grid = self.values[link]
        return Chain(label=f"link{link}", values=grid, flows=grid[:, None],
                     prices=np.asarray([self.prices.p_link[link]]),
                     kernels=self.kernels[link], phi_form=self.prices.phi_form)

    def n_links(self) -> int:
        return len(self.values)

    def nearest_state(self, link: int, load: float) -> int:
        return int(np.argmin(np.abs(self.values[link] - load)))


def link_load_ranges(routing: np.ndarray, units: list[VpnUnit]) -> list[tuple[float, float]]:
    """Per-link achievable load range over the product of VPN states.

    The load is linear in each site's free coordinate, so per-site minima and
    maxima add up; no product enumeration is needed.
    """
    n_links = routing.shape[0]
    ranges = []
    for l in range(n_links):
        lo = hi = 0.0
        col = 0
        for unit in units:
            for site in unit.hose.sites:
                seg = unit.space.segments[site]
                contrib = routing[l, col] * seg.x_first + routing[l, col + 1] * seg.x_rest
                lo += contrib.min()
                hi += contrib.max()
                col += 2
        ranges.append((float(lo), float(hi)))
    return ranges


def build_link_mdp(routing: np.ndarray, units: list[VpnUnit], alpha: float,
                   nu1: float, nu2: float, link_prices: PriceTable,
                   seed: int) -> LinkModel:
    """Discretize every link's load range with the VPNs' step and draw the
    jump kernels with rates nu1, nu2 (same draw-sort-normalize procedure as
    the segment kernels, one stream for all links)."""
    if nu1 <= 0 or nu2 <= 0:
        raise ConfigurationError("link kernel rates nu1, nu2 must be positive")
    rng = np.random.default_rng(seed)
    values, kernels = [], []
    for lo, hi in link_load_ranges(routing, units):
        n = int(math.floor((hi - lo) / alpha + 1e-12)) + 1
        grid = lo + np.arange(n) * alpha
        values.append(grid)
        kernels.append(sample_motion_kernels(n, nu1, nu2, rng))
    return LinkModel(values=values, kernels=kernels, prices=link_prices,
                     alpha=alpha, nu1=nu1, nu2=nu2, seed=seed)


LOCAL = "LOCAL"
GLOBAL = "GLOBAL"


@dataclass
class CeEpochReport:
    epoch: int
    iterations: int
    residual: float
    shapes: tuple[float, float, float]
    sample_size: int


@dataclass
class HierarchicalTrajectory:
    """Epoch-indexed record of the two-level simulation.

    ``regimes[t]`` names the regime that produced epoch t (epoch 0 is LOCAL);
    ``violated[t]`` is the bound check evaluated at epoch t, which decides
    the regime of epoch t+1.  Local action entries are -1 on global epochs
    and vice versa.
    """

    vpn_names: list[str]
    site_names: list[str]
    epochs: np.ndarray
    regimes: list[str]
    states: np.ndarray        # (T+1, n_vpn, n_sites) indices
    loads: np.ndarray         # (T+1, n_links)
    vpn_costs: np.ndarray     # (T+1, n_vpn)
    link_costs: np.ndarray    # (T+1,)
    violated: np.ndarray      # (T+1,) bool
    local_actions: np.ndarray  # (T+1, n_vpn, n_sites)
    link_actions: np.ndarray   # (T+1, n_links)
    seed: int
    ce_reports: list[CeEpochReport] = field(default_factory=list)


@dataclass(frozen=True)
class CeConfig:
    K: float
    rho: float = 0.01
    N: int = 2000
    d: int = 5
    grid_step: float = 1.0
    max_iterations: int = 200


def _states_to_costs(units, states, prev_states, bounds_cost):
    costs = {}
    for u, unit in enumerate(units):
        x_now = {site: float(unit.space.segments[site].x_first[states[u][site]])
                 for site in unit.hose.sites}
        ref = states[u] if bounds_cost == "delay" else prev_states[u]
        x_prev = {site: float(unit.space.segments[site].x_first[ref[site]])
                  for site in unit.hose.sites}
        costs[unit.name] = vpn_stage_cost(unit.hose, x_now, x_prev, unit.prices)
    return costs


def _snap_segment_state(seg, x_first_target: float, x_rest_target: float) -> int:
    gaps = np.abs(seg.x_first - x_first_target) + np.abs(seg.x_rest - x_rest_target)
    return int(np.argmin(gaps))


def simulate_hierarchical(units: list[VpnUnit], routing: np.ndarray,
                          bounds: SatisfactionBounds,
                          local_solutions: dict[str, dict[str, SegmentSolution]],
                          link_model: LinkModel,
                          link_solutions: list[SegmentSolution],
                          T: int, seed: int, ce_config: CeConfig,
                          bounds_cost: str = "full",
                          initial_states: list[dict[str, int]] | None = None
                          ) -> HierarchicalTrajectory:
    """Run the two-level rollout for epochs 0..T.

    Per epoch: evaluate every VPN's stage cost against its bound.  If all
    hold, each segment advances under its local optimal action.  Otherwise
    the link states advance under the global optimal actions, the new link
    reservations are decomposed by Cross-Entropy (retried once with a doubled
    sample on failure), and each segment snaps to the grid state nearest the
    decomposed traffic pair.
    """
    if bounds_cost not in ("full", "delay"):
        raise ConfigurationError(f"bounds_cost must be full or delay, got {bounds_cost!r}")
    rng = np.random.default_rng(derive_seed(seed, "hierarchy:transitions"))
    n_vpn = len(units)
    site_names = list(units[0].hose.sites)
    n_links = link_model.n_links()
    chains = [unit.chains() for unit in units]
    seg_cdf = [{site: np.cumsum(chain.kernels, axis=2) for site, chain in chains[u].items()}
               for u in range(n_vpn)]
    link_cdf = [np.cumsum(link_model.kernels[l], axis=2) for l in range(n_links)]
    tolerance = decomposition_tolerance(link_model.alpha, n_links)

    if initial_states is None:
        states = [{site: 0 for site in unit.hose.sites} for unit in units]
    else:
        states = [dict(s) for s in initial_states]
    prev_states = [dict(s) for s in states]

    traj = HierarchicalTrajectory(
        vpn_names=[u.name for u in units], site_names=site_names,
        epochs=np.arange(T + 1), regimes=[LOCAL] * (T + 1),
        states=np.zeros((T + 1, n_vpn, len(site_names)), dtype=int),
        loads=np.zeros((T + 1, n_links)),
        vpn_costs=np.zeros((T + 1, n_vpn)),
        link_costs=np.zeros(T + 1),
        violated=np.zeros(T + 1, dtype=bool),
        local_actions=np.full((T + 1, n_vpn, len(site_names)), -1, dtype=int),
        link_actions=np.full((T + 1, n_links), -1, dtype=int),
        seed=seed)

    prev_loads = None
    for t in range(T + 1):
        flows = [vpn_flows(units[u], states[u]) for u in range(n_vpn)]
        loads = aggregate_links(routing, flows)
        costs = _states_to_costs(units, states, prev_states, bounds_cost)
        violated, _ = satisfaction_check(costs, bounds)

        traj.states[t] = [[states[u][site] for site in site_names] for u in range(n_vpn)]
        traj.loads[t] = loads
        traj.vpn_costs[t] = [costs[u.name] for u in units]
        traj.link_costs[t] = link_stage_cost(loads, loads if prev_loads is None else prev_loads,
                                             link_model.prices)
        traj.violated[t] = violated
        if t > 0:
            traj.regimes[t] = GLOBAL if traj.violated[t - 1] else LOCAL

        if t == T:
            break
        prev_states = [dict(s) for s in states]
        prev_loads = loads
        if not violated:
            for u, unit in enumerate(units):
                for s_i, site in enumerate(unit.hose.sites):
                    sol = local_solutions[unit.name][site]
                    idx = states[u][site]
                    a = int(sol.actions[t if t <= sol.horizon else 0, idx])
                    traj.local_actions[t, u, s_i] = a
                    cdf = seg_cdf[u][site][a, idx]
                    states[u][site] = int(np.searchsorted(cdf, rng.random(), side="right"))
        else:
            link_states = [link_model.nearest_state(l, loads[l]) for l in range(n_links)]
            new_values = np.empty(n_links)
            for l in range(n_links):
                sol = link_solutions[l]
                d = int(sol.actions[t if t <= sol.horizon else 0, link_states[l]])
                traj.link_actions[t, l] = d
                cdf = link_cdf[l][d, link_states[l]]
                nxt = int(np.searchsorted(cdf, rng.random(), side="right"))
                new_values[l] = link_model.values[l][nxt]
            target = np.asarray([phi(new_values[l], link_model.prices.p_link[l],
                                     link_model.prices.phi_form) for l in range(n_links)])
            result = _decompose(target, routing, ce_config, tolerance,
                                derive_seed(seed, f"hierarchy:ce:{t}"), t)
            traj.ce_reports.append(CeEpochReport(
                epoch=t, iterations=result.iterations, residual=result.best_residual,
                shapes=result.params.as_tuple(), sample_size=ce_config.N))
            flow_prices = np.concatenate([unit.flow_prices() for unit in units])
            traffic = np.asarray([phi_inverse(b, p, link_model.prices.phi_form)
                                  for b, p in zip(result.best_candidate, flow_prices)])
            col = 0
            for u, unit in enumerate(units):
                for site in unit.hose.sites:
                    seg = unit.space.segments[site]
                    states[u][site] = _snap_segment_state(seg, traffic[col], traffic[col + 1])
                    col += 2
    return traj


def decomposition_tolerance(alpha: float, n_links: int) -> float:
    """Accept a decomposition whose link residual averages alpha per link."""
    return alpha * math.sqrt(n_links)


def _decompose(target, routing, cfg: CeConfig, tolerance: float, seed: int,
               epoch: int) -> CEResult:
    last_error = None
    for attempt, n in enumerate((cfg.N, 2 * cfg.N)):
        try:
            result = run_ce(target, routing, K=cfg.K, rho=cfg.rho, N=n, d=cfg.d,
                            seed=seed + attempt, grid_step=cfg.grid_step,
                            max_iterations=cfg.max_iterations)
        except DecompositionError as err:
            last_error = err
            continue
        if result.best_residual <= tolerance:
            return result
        last_error = DecompositionError(
            f"epoch {epoch}: residual {result.best_residual:.3f} above tolerance {tolerance:.3f}")
    raise DecompositionError(f"decomposition failed at epoch {epoch}: {last_error}")
