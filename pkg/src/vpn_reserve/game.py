"""Two-person zero-sum switching-control game between the selfish VPN
ensemble (player 1, controls transitions on E1) and the central operator
(player 2, controls transitions on E2).

The loop alternates two exact steps: with player 1 pinned on E1, the
discounted single-controller game is solved through an occupation-measure LP
over E2 (the E1 block is eliminated analytically first, since player 2's E1
choice is myopic there); then player 1 improves each E1 state by an extreme
optimal action of the local matrix game built from the current value vector.
Values use the normalized Shapley operator (1-beta) r + beta P V throughout,
and the loop stops when the value vector repeats within 1e-9.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .costs import chain_cost_table, vpn_stage_cost
from .errors import ConfigurationError, GameIterationError, InstanceTooLargeError
from .hierarchy import LinkModel, VpnUnit, aggregate_links, vpn_flows
from .hose import sample_motion_kernels
from .lp import simplex_min, solve_matrix_game

VALUE_REPEAT_TOL = 1e-9
PRODUCT_STATE_GUARD = 10**6
ACTION_SPACE_GUARD = 1000


@dataclass(frozen=True)
class SwitchingGame:
    """Abstract instance: player 1's kernel applies on E1, player 2's on E2;
    rewards r[s, a, d] are paid by player 2 to player 1."""

    e1: np.ndarray          # bool mask over states
    rewards: np.ndarray     # (n, |A|, |D|)
    p1_kernel: np.ndarray   # (n, |A|, n)
    p2_kernel: np.ndarray   # (n, |D|, n)
    beta: float

    def __post_init__(self):
        n, na, nd = self.rewards.shape
        if self.p1_kernel.shape != (n, na, n) or self.p2_kernel.shape != (n, nd, n):
            raise ConfigurationError("kernel shapes do not match the reward tensor")
        if not 0 <= self.beta < 1:
            raise ConfigurationError(f"beta must lie in [0,1), got {self.beta}")

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_a(self) -> int:
        return self.rewards.shape[1]

    @property
    def n_d(self) -> int:
        return self.rewards.shape[2]


@dataclass(frozen=True)
class StatePartition:
    states: tuple
    e1: np.ndarray

    def counts(self) -> tuple[int, int]:
        n1 = int(self.e1.sum())
        return n1, len(self.e1) - n1


@dataclass(frozen=True)
class GameSolution:
    values: np.ndarray
    p1_strategy: np.ndarray  # (n, |A|) row-stochastic
    p2_strategy: np.ndarray  # (n, |D|) row-stochastic
    iterations: int


def solve_single_controller(game: SwitchingGame, f1: np.ndarray,
                            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value vector and both players' stationary responses with player 1
    pinned to ``f1`` on E1.

    Player 2's E1 choice minimizes the stage reward alone (transitions there
    do not depend on d), so the E1 block reduces to a Markov reward process
    and is eliminated exactly.  The remaining E2 game is player-2 controlled
    and solves as one occupation-measure LP with epigraph rows for player 1's
    best response; the value vector is then recomputed by a linear solve.
    """
    n, na, nd = game.n_states, game.n_a, game.n_d
    beta = game.beta
    e1_idx = np.nonzero(game.e1)[0]
    e2_idx = np.nonzero(~game.e1)[0]
    n1, n2 = len(e1_idx), len(e2_idx)

    # pinned player 1 on E1: stage rewards to minimize and the fixed kernel
    rho1 = np.einsum("sa,sad->sd", f1[e1_idx], game.rewards[e1_idx]) if n1 else \
        np.zeros((0, nd))
    d_e1 = np.argmin(rho1, axis=1) if n1 else np.zeros(0, dtype=int)
    u1 = (1.0 - beta) * rho1[np.arange(n1), d_e1] if n1 else np.zeros(0)
    q1 = np.einsum("sa,san->sn", f1[e1_idx], game.p1_kernel[e1_idx]) if n1 else \
        np.zeros((0, n))

    p2_strategy = np.zeros((n, nd))
    if n1:
        p2_strategy[e1_idx, d_e1] = 1.0

    if n2 == 0:
        values = np.zeros(n)
        if n1:
            T = np.eye(n1) - beta * q1[:, e1_idx]
            values[e1_idx] = np.linalg.solve(T, u1)
        p1_strategy = f1.copy()
        return values, p1_strategy, p2_strategy

    if n1:
        T1 = np.linalg.inv(np.eye(n1) - beta * q1[:, e1_idx])
        pass_through = T1 @ q1[:, e2_idx]        # discounted E1 -> E2 return
        e1_stage = T1 @ u1
    # effective E2 rewards and sub-stochastic weights after E1 elimination
    r_eff = (1.0 - beta) * game.rewards[e2_idx]
    w = game.p2_kernel[e2_idx][:, :, e2_idx].copy()
    if n1:
        p21 = game.p2_kernel[e2_idx][:, :, e1_idx]
        r_eff = r_eff + beta * (p21 @ e1_stage)[:, None, :]
        w = w + beta * np.einsum("sdk,km->sdm", p21, pass_through)

    x = _occupation_lp(r_eff, w, beta)
    mass = x.sum(axis=1)
    y2 = x / mass[:, None]
    p2_strategy[e2_idx] = y2

    # player 1's myopic best response on E2 against the extracted mix
    stage1 = np.einsum("sad,sd->sa", game.rewards[e2_idx], y2)
    a_e2 = np.argmax(stage1, axis=1)
    p1_strategy = f1.copy()
    p1_strategy[e2_idx] = 0.0
    p1_strategy[e2_idx, a_e2] = 1.0

    values = _profile_values(game, p1_strategy, p2_strategy)
    return values, p1_strategy, p2_strategy


def _occupation_lp(r_eff: np.ndarray, w: np.ndarray, beta: float) -> np.ndarray:
    """min sum_s max_a sum_d r_eff[s,a,d] x_sd over the discounted flow
    polytope sum_d x_s'd - beta sum_sd w[s,d,s'] x_sd = gamma2(s'), x >= 0.

    Epigraph variables are split into positive parts; a basic solution keeps
    the extracted mixes extreme.
    """
    n2, na, nd = r_eff.shape
    n_x = n2 * nd
    gamma2 = np.full(n2, 1.0 / n2)
    # columns: x (n_x), t+ (n2), t- (n2), surplus (n2*na)
    n_cols = n_x + 2 * n2 + n2 * na
    A = np.zeros((n2 + n2 * na, n_cols))
    b = np.zeros(n2 + n2 * na)
    for sp in range(n2):
        row = A[sp]
        row[sp * nd:(sp + 1) * nd] += 1.0
        row[:n_x] -= beta * w[:, :, sp].reshape(-1)
        b[sp] = gamma2[sp]
    for s in range(n2):
        for a in range(na):
            r = n2 + s * na + a
            A[r, n_x + s] = 1.0
            A[r, n_x + n2 + s] = -1.0
            A[r, s * nd:(s + 1) * nd] = -r_eff[s, a]
            A[r, n_x + 2 * n2 + s * na + a] = -1.0
    c = np.zeros(n_cols)
    c[n_x:n_x + n2] = 1.0
    c[n_x + n2:n_x + 2 * n2] = -1.0
    res = simplex_min(c, A, b)
    return res.x[:n_x].reshape(n2, nd)


def _profile_values(game: SwitchingGame, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Exact normalized values of a stationary strategy profile."""
    n = game.n_states
    P = np.where(game.e1[:, None], np.einsum("sa,san->sn", p1, game.p1_kernel),
                 np.einsum("sd,sdn->sn", p2, game.p2_kernel))
    stage = np.einsum("sa,sad,sd->s", p1, game.rewards, p2)
    return np.linalg.solve(np.eye(n) - game.beta * P, (1.0 - game.beta) * stage)


def local_matrix_game(game: SwitchingGame, state: int, values: np.ndarray
                      ) -> tuple[float, np.ndarray]:
    """Extreme optimal player-1 strategy in the one-shot game
    (1-beta) r(s,a,d) + beta p(.|s,a) V at an E1 state.

    If a pure row already secures the game value it is returned (lowest
    index first); otherwise the LP's basic mixed strategy is.
    """
    M = (1.0 - game.beta) * game.rewards[state] \
        + game.beta * (game.p1_kernel[state] @ values)[:, None]
    sol = solve_matrix_game(M)
    row_guarantees = M.min(axis=1)
    secure = np.nonzero(row_guarantees >= sol.value - 1e-12)[0]
    strategy = np.zeros(game.n_a)
    if len(secure):
        strategy[secure[0]] = 1.0
    else:
        strategy = sol.row_strategy
    return float(sol.value), strategy


def solve_switching_game(game: SwitchingGame, max_iterations: int = 500
                         ) -> GameSolution:
    """Alternate single-controller solves and E1 matrix-game improvements
    until the value vector repeats; finite termination is the point of the
    switching-control structure (order field property)."""
    n = game.n_states
    f1 = np.zeros((n, game.n_a))
    f1[:, 0] = 1.0  # neutral start: the stay action everywhere
    previous = None
    for iteration in range(1, max_iterations + 1):
        values, p1, p2 = solve_single_controller(game, f1)
        done = previous is not None and np.abs(values - previous).max() <= VALUE_REPEAT_TOL
        if done or not game.e1.any():
            p1_star, p2_star = _equilibrium_profile(game, values)
            return GameSolution(values=values, p1_strategy=p1_star,
                                p2_strategy=p2_star, iterations=iteration)
        improved = p1.copy()
        for s in np.nonzero(game.e1)[0]:
            _, strategy = local_matrix_game(game, s, values)
            improved[s] = strategy
        f1 = improved
        previous = values
    raise GameIterationError(
        f"switching-game loop did not terminate in {max_iterations} iterations",
        previous_values=previous, last_values=values)


def _equilibrium_profile(game: SwitchingGame, values: np.ndarray
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Stationary optimal strategies from the per-state one-shot games at the
    converged values; the controller's kernel supplies the continuation.

    Both sides of each local game are needed: a myopic pure reply would leave
    the opponent a one-step deviation even though the values are right.
    """
    n = game.n_states
    p1 = np.zeros((n, game.n_a))
    p2 = np.zeros((n, game.n_d))
    for s in range(n):
        if game.e1[s]:
            M = (1.0 - game.beta) * game.rewards[s] \
                + game.beta * (game.p1_kernel[s] @ values)[:, None]
        else:
            M = (1.0 - game.beta) * game.rewards[s] \
                + game.beta * (game.p2_kernel[s] @ values)[None, :]
        sol = solve_matrix_game(M)
        p1[s] = _prefer_pure(M.min(axis=1), sol.value, sol.row_strategy, True)
        p2[s] = _prefer_pure(M.max(axis=0), sol.value, sol.col_strategy, False)
    return p1, p2


def _prefer_pure(guarantees: np.ndarray, value: float, mixed: np.ndarray,
                 maximizer: bool) -> np.ndarray:
    if maximizer:
        secure = np.nonzero(guarantees >= value - 1e-12)[0]
    else:
        secure = np.nonzero(guarantees <= value + 1e-12)[0]
    out = np.zeros_like(mixed)
    if len(secure):
        out[secure[0]] = 1.0
        return out
    return mixed


def deviation_gains(game: SwitchingGame, p1: np.ndarray, p2: np.ndarray
                    ) -> tuple[float, float]:
    """One-step deviation improvements for both players at a profile.

    Transition deviations only exist for the controller of each state; the
    other player deviates in the stage reward alone.
    """
    values = _profile_values(game, p1, p2)
    n = game.n_states
    gain1 = gain2 = 0.0
    for s in range(n):
        cont_fixed = (np.einsum("a,an->n", p1[s], game.p1_kernel[s]) if game.e1[s]
                      else np.einsum("d,dn->n", p2[s], game.p2_kernel[s]))
        for a in range(game.n_a):
            stage = (1.0 - game.beta) * game.rewards[s, a] @ p2[s]
            cont = game.p1_kernel[s, a] if game.e1[s] else cont_fixed
            q = stage + game.beta * cont @ values
            gain1 = max(gain1, q - values[s])
        for d in range(game.n_d):
            stage = (1.0 - game.beta) * p1[s] @ game.rewards[s, :, d]
            cont = game.p2_kernel[s, d] if not game.e1[s] else cont_fixed
            q = stage + game.beta * cont @ values
            gain2 = max(gain2, values[s] - q)
    return gain1, gain2


def partition_states(units: list[VpnUnit], bounds, active=None,
                     initial_states=None) -> StatePartition:
    """Classify every product state by its per-VPN delay cost against the
    satisfaction bounds (E2 collects the violating states)."""
    segments, pinned = _segment_layout(units, active, initial_states)
    sizes = [len(units[u].space.segments[site]) for u, site, free in segments if free]
    total = math.prod(sizes) if sizes else 1
    if total > PRODUCT_STATE_GUARD:
        raise InstanceTooLargeError(f"product space of {total} states exceeds guard")
    states = tuple(itertools.product(*[range(s) for s in sizes]))
    e1 = np.zeros(len(states), dtype=bool)
    for k, combo in enumerate(states):
        indices = _combo_to_indices(segments, pinned, combo)
        costs = {}
        for u, unit in enumerate(units):
            x = {site: float(unit.space.segments[site].x_first[indices[u][site]])
                 for site in unit.hose.sites}
            costs[unit.name] = vpn_stage_cost(unit.hose, x, x, unit.prices)
        violated = any(costs[name] > bounds.bounds[name] for name in costs)
        e1[k] = not violated
    return StatePartition(states=states, e1=e1)


def _segment_layout(units, active, initial_states):
    segments = []
    for u, unit in enumerate(units):
        for site in unit.hose.sites:
            free = active is None or (unit.name, site) in active
            segments.append((u, site, free))
    pinned = {}
    for k, (u, site, free) in enumerate(segments):
        if not free:
            pinned[(u, site)] = 0 if initial_states is None else initial_states[u][site]
    return segments, pinned


def _combo_to_indices(segments, pinned, combo):
    indices = {}
    it = iter(combo)
    for u, site, free in segments:
        indices.setdefault(u, {})[site] = next(it) if free else pinned[(u, site)]
    return indices


@dataclass(frozen=True)
class ScenarioGame:
    game: SwitchingGame
    partition: StatePartition
    segment_names: list[tuple[str, str]]
    p1_actions: tuple
    p2_actions: tuple
    vpn_cost_part: np.ndarray
    link_cost_part: np.ndarray


def build_switching_game(units: list[VpnUnit], routing: np.ndarray,
                         link_model: LinkModel, bounds, beta: float,
                         lambda_headroom: float = 0.0, active=None,
                         initial_states=None, nu_seed: int = 0) -> ScenarioGame:
    """Assemble the product game from a scenario.

    Player 1 chooses one motion per active segment; player 2 one motion per
    link.  On E2 each active segment moves per a nu-rate kernel under the
    action of the link carrying its first flow (mono-path routing), keeping
    the global kernel a product of per-coordinate kernels.  The reward is the
    sum of the VPNs' expected stage costs minus the links' plus the headroom
    constant.
    """
    segments, pinned = _segment_layout(units, active, initial_states)
    free_segments = [(u, site) for u, site, free in segments if free]
    partition = partition_states(units, bounds, active, initial_states)
    states = partition.states
    n = len(states)
    n_links = link_model.n_links()

    na = 3 ** len(free_segments)
    nd = 3 ** n_links
    if na > ACTION_SPACE_GUARD or nd > ACTION_SPACE_GUARD:
        raise InstanceTooLargeError(
            f"joint action spaces {na} x {nd} exceed the desk-scale guard")
    p1_actions = tuple(itertools.product(range(3), repeat=len(free_segments)))
    p2_actions = tuple(itertools.product(range(3), repeat=n_links))

    chains = {(units[u].name, site): units[u].chains()[site] for u, site in free_segments}
    cost_tables = {key: chain_cost_table(chain) for key, chain in chains.items()}
    nu_kernels = {}
    rng = np.random.default_rng(nu_seed)
    for u, site in free_segments:
        n_seg = len(units[u].space.segments[site])
        nu_kernels[(units[u].name, site)] = sample_motion_kernels(
            n_seg, link_model.nu1, link_model.nu2, rng)
    primary = [_primary_link(routing, units, u, site) for u, site in free_segments]

    link_tables = [chain_cost_table(link_model.chain(l)) for l in range(n_links)]
    link_states = np.zeros((n, n_links), dtype=int)
    frozen_cost = _frozen_cost(units, segments, pinned, cost_tables)
    vpn_part = np.zeros((n, na))
    for k, combo in enumerate(states):
        indices = _combo_to_indices(segments, pinned, combo)
        flows = [vpn_flows(units[u], indices[u]) for u in range(len(units))]
        loads = aggregate_links(routing, flows)
        for l in range(n_links):
            link_states[k, l] = link_model.nearest_state(l, loads[l])
        for ai, acts in enumerate(p1_actions):
            total = frozen_cost
            for j, (u, site) in enumerate(free_segments):
                total += cost_tables[(units[u].name, site)][combo[j], acts[j]]
            vpn_part[k, ai] = total
    link_part = np.zeros((n, nd))
    for di, dacts in enumerate(p2_actions):
        per_state = np.zeros(n)
        for l in range(n_links):
            per_state += link_tables[l][link_states[:, l], dacts[l]]
        link_part[:, di] = per_state + lambda_headroom
    rewards = vpn_part[:, :, None] - link_part[:, None, :]

    index_of = {combo: k for k, combo in enumerate(states)}
    p1_kernel = np.zeros((n, na, n))
    p2_kernel = np.zeros((n, nd, n))
    seg_kernels = [chains[(units[u].name, site)].kernels for u, site in free_segments]
    nu_list = [nu_kernels[(units[u].name, site)] for u, site in free_segments]
    for k, combo in enumerate(states):
        for ai, acts in enumerate(p1_actions):
            p1_kernel[k, ai] = _product_row(combo, acts, seg_kernels, states, index_of)
        for di, dacts in enumerate(p2_actions):
            motions = tuple(dacts[primary[j]] for j in range(len(free_segments)))
            p2_kernel[k, di] = _product_row(combo, motions, nu_list, states, index_of)

    game = SwitchingGame(e1=partition.e1, rewards=rewards, p1_kernel=p1_kernel,
                         p2_kernel=p2_kernel, beta=beta)
    return ScenarioGame(game=game, partition=partition,
                        segment_names=[(units[u].name, site) for u, site in free_segments],
                        p1_actions=p1_actions, p2_actions=p2_actions,
                        vpn_cost_part=vpn_part, link_cost_part=link_part)


def _frozen_cost(units, segments, pinned, cost_tables):
    total = 0.0
    for u, site, free in segments:
        if not free:
            seg = units[u].space.segments[site]
            idx = pinned[(u, site)]
            chain = units[u].chains()[site]
            table = chain_cost_table(chain)
            total += table[idx, 0]
    return total


def _primary_link(routing, units, u, site) -> int:
    col = 0
    for uu, unit in enumerate(units):
        for s in unit.hose.sites:
            if uu == u and s == site:
                carriers = np.nonzero(routing[:, col])[0]
                if len(carriers) == 0:
                    raise ConfigurationError(
                        f"flow of segment ({unit.name},{s}) is not routed on any link")
                return int(carriers[0])
            col += 2
    raise ConfigurationError("segment not found in routing layout")


def _product_row(combo, motions, kernels, states, index_of):
    rows = [kernels[j][motions[j], combo[j]] for j in range(len(combo))]
    out = np.zeros(len(states))
    supports = [np.nonzero(r)[0] for r in rows]
    for nxt in itertools.product(*supports):
        prob = 1.0
        for j, idx in enumerate(nxt):
            prob *= rows[j][idx]
        out[index_of[nxt]] = prob
    return out
