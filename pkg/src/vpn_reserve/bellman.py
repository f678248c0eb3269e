"""Finite-horizon min-max solver (backward induction) and trajectory rollouts.

The inner minimization over reservations is eliminated analytically through
phi before maximizing over actions, so each segment solves a plain
finite-horizon MDP with the expected one-step stage cost C(s, a).  Fixed
mono-path routing makes the per-source segments independent, so the solver
runs once per segment instead of on the product space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import Chain, PriceTable, chain_cost_table, chain_move_cost, \
    chain_reservations, segment_chain
from .errors import ConfigurationError, InstanceTooLargeError
from .hose import TransitionModel

ENUMERATION_LEAF_GUARD = 10**6


@dataclass(frozen=True)
class SegmentSolution:
    """Per-epoch optimal actions and values for one segment.

    ``actions[t, s]`` is the epoch-t argmax (ties to the lowest action index),
    ``values[t, s]`` the associated value; epoch T is the myopic terminal
    stage, epoch 0 carries the full horizon.
    """

    label: str
    horizon: int
    actions: np.ndarray
    values: np.ndarray
    cost_table: np.ndarray

    def strategy_matrix(self, t: int) -> np.ndarray:
        """Column-stochastic (3, n) strategy matrix for epoch ``t``."""
        n = self.actions.shape[1]
        F = np.zeros((3, n))
        F[self.actions[t], np.arange(n)] = 1.0
        return F


def solve_chain(chain: Chain, beta: float, T: int) -> SegmentSolution:
    """Backward induction over epochs 0..T on one chain."""
    if T < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {T}")
    if not 0 <= beta < 1:
        raise ConfigurationError(f"beta must lie in [0,1), got {beta}")
    n = len(chain)
    cost = chain_cost_table(chain)
    actions = np.zeros((T + 1, n), dtype=int)
    values = np.zeros((T + 1, n))
    actions[T] = np.argmax(cost, axis=1)
    values[T] = cost[np.arange(n), actions[T]]
    for t in range(T - 1, -1, -1):
        q = cost.copy()
        for a in range(3):
            q[:, a] += beta * chain.kernels[a] @ values[t + 1]
        actions[t] = np.argmax(q, axis=1)
        values[t] = q[np.arange(n), actions[t]]
    return SegmentSolution(label=chain.label, horizon=T, actions=actions,
                           values=values, cost_table=cost)


def solve_finite_horizon(model: TransitionModel, prices: PriceTable,
                         T: int) -> dict[str, SegmentSolution]:
    """Solve every segment of the model independently."""
    out = {}
    for site, segment in model.space.segments.items():
        chain = segment_chain(segment, model, prices)
        out[site] = solve_chain(chain, prices.beta, T)
    return out


def enumerate_optimal(chain: Chain, beta: float, T: int, initial_state: int) -> float:
    """Exact optimum by exhaustive expectimax tree expansion (testing oracle).

    Expands every action branch and kernel outcome recursively without any
    value table; per-branch accumulation keeps it mechanically independent of
    the backward-induction path it checks.
    """
    n = len(chain)
    if (3 * n) ** T > ENUMERATION_LEAF_GUARD:
        raise InstanceTooLargeError(
            f"enumeration tree of ({3 * n})^{T} leaves exceeds {ENUMERATION_LEAF_GUARD}")
    move = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            move[i, j] = chain_move_cost(chain, i, j)

    def expand(s: int, stages_to_go: int) -> float:
        best = -np.inf
        for a in range(3):
            row = chain.kernels[a, s]
            total = 0.0
            for j in np.nonzero(row)[0]:
                branch = move[s, j]
                if stages_to_go > 0:
                    branch += beta * expand(j, stages_to_go - 1)
                total += row[j] * branch
            if total > best:
                best = total
        return best

    return expand(initial_state, T)


@dataclass(frozen=True)
class Trajectory:
    """One seeded rollout: per epoch the visited state, the action chosen
    there, the phi reservations and the realized stage cost (its first epoch
    compares against itself, so it carries no change penalty)."""

    label: str
    seed: int
    states: np.ndarray
    actions: np.ndarray
    reservations: np.ndarray
    stage_costs: np.ndarray

    def __len__(self) -> int:
        return len(self.states)


def rollout(solution: SegmentSolution, chain: Chain, initial_state: int, seed: int,
            epochs: int | None = None) -> Trajectory:
    """Roll the chain under the solved policy.

    Epoch t uses the epoch-t strategy while t <= T; longer rollouts fall back
    to the epoch-0 strategy, the converged (stationary) end of the induction.
    """
    n = len(chain)
    if not 0 <= initial_state < n:
        raise ConfigurationError(f"initial state {initial_state} out of range")
    total = solution.horizon + 1 if epochs is None else int(epochs)
    cdf = np.cumsum(chain.kernels, axis=2)
    rng = np.random.default_rng(seed)
    states = np.empty(total, dtype=int)
    actions = np.empty(total, dtype=int)
    costs = np.empty(total)
    reservations = np.empty((total, chain.flows.shape[1]))
    s = initial_state
    prev = initial_state
    for t in range(total):
        a = solution.actions[t if t <= solution.horizon else 0, s]
        states[t] = s
        actions[t] = a
        reservations[t] = chain_reservations(chain, s)
        costs[t] = chain_move_cost(chain, prev, s)
        prev = s
        s = int(np.searchsorted(cdf[a, s], rng.random(), side="right"))
        s = min(s, n - 1)
    return Trajectory(label=chain.label, seed=seed, states=states, actions=actions,
                      reservations=reservations, stage_costs=costs)


def sojourn_statistics(trajectories: list[Trajectory]) -> dict[tuple[int, int], int]:
    """Exact (state, action) visit counts over all decision epochs."""
    if not trajectories:
        raise ConfigurationError("sojourn statistics need at least one trajectory")
    counts: dict[tuple[int, int], int] = {}
    for traj in trajectories:
        for s, a in zip(traj.states, traj.actions):
            key = (int(s), int(a))
            counts[key] = counts.get(key, 0) + 1
    return counts
