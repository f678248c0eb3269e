"""Stationary deterministic strategies via the dual occupation-measure LP,
and the ergodicity diagnostic comparing temporal and spatial means.

The LP maximizes the stationary stage cost over occupation measures x_sa
subject to sum_{s,a} [delta(s,s') - beta p(s'|s,a)] x_sa = gamma(s').  A basic
optimal solution is a vertex, which forces exactly one positive action per
state and hence a deterministic stationary strategy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bellman import Trajectory, sojourn_statistics
from .costs import Chain, chain_cost_table
from .errors import ConfigurationError, SimplexError
from .lp import simplex_max

FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True)
class LPInstance:
    """Equality-form occupation LP for one chain; columns are (state, action)
    pairs in state-major order."""

    label: str
    objective: np.ndarray
    constraints: np.ndarray
    rhs: np.ndarray
    beta: float
    kernels: np.ndarray
    cost_table: np.ndarray


@dataclass(frozen=True)
class OccupationMeasure:
    label: str
    x: np.ndarray  # (n, 3)

    def state_mass(self) -> np.ndarray:
        return self.x.sum(axis=1)


def uniform_gamma(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def build_dual_lp(chain: Chain, beta: float, gamma: np.ndarray) -> LPInstance:
    """Assemble the dual LP; every column must sum to 1 - beta exactly."""
    if not 0 <= beta < 1:
        raise ConfigurationError(f"beta must lie in [0,1), got {beta}")
    gamma = np.asarray(gamma, dtype=float)
    n = len(chain)
    if gamma.shape != (n,) or np.any(gamma <= 0) or abs(gamma.sum() - 1.0) > 1e-9:
        raise ConfigurationError("gamma must be strictly positive and sum to 1")
    cost = chain_cost_table(chain)
    A = np.zeros((n, 3 * n))
    for s in range(n):
        for a in range(3):
            A[:, 3 * s + a] -= beta * chain.kernels[a, s]
            A[s, 3 * s + a] += 1.0
    col_sums = A.sum(axis=0)
    if not np.allclose(col_sums, 1.0 - beta, atol=1e-10):
        raise ConfigurationError("kernel rows do not normalize: column sums differ from 1 - beta")
    objective = cost.reshape(-1)
    return LPInstance(label=chain.label, objective=objective, constraints=A,
                      rhs=gamma, beta=beta, kernels=chain.kernels, cost_table=cost)


def solve_simplex(lp: LPInstance) -> OccupationMeasure:
    """Basic optimal occupation measure, one positive action per state.

    Exact ties between a truncated jump action and stay (identical kernel
    rows at a boundary state) are canonicalized toward the lower action index
    so the LP strategy matches the DP tie rule.
    """
    res = simplex_max(lp.objective, lp.constraints, lp.rhs)
    x = res.x.reshape(-1, 3).copy()
    n = x.shape[0]
    residual = np.abs(lp.constraints @ x.reshape(-1) - lp.rhs).max()
    if residual > FEASIBILITY_TOL:
        raise SimplexError(f"occupation measure violates the LP rows by {residual:.2e}")
    for s in range(n):
        a = int(np.argmax(x[s]))
        for lower in range(a):
            same_row = np.array_equal(lp.kernels[lower, s], lp.kernels[a, s])
            if same_row and lp.cost_table[s, lower] == lp.cost_table[s, a]:
                x[s, lower], x[s, a] = x[s, a], x[s, lower]
                break
    positives = (x > 1e-10).sum(axis=1)
    if np.any(positives != 1):
        raise SimplexError(f"expected one positive action per state, got {positives}")
    return OccupationMeasure(label=lp.label, x=x)


def extract_stationary_strategy(occupation: OccupationMeasure) -> np.ndarray:
    """Column-stochastic (3, n) strategy f(s,a) = x_sa / sum_a x_sa."""
    mass = occupation.state_mass()
    if np.any(mass <= 0):
        raise ConfigurationError("a state carries no occupation mass")
    return (occupation.x / mass[:, None]).T


def stationary_strategy(chain: Chain, beta: float,
                        gamma: np.ndarray | None = None) -> tuple[OccupationMeasure, np.ndarray]:
    lp = build_dual_lp(chain, beta, uniform_gamma(len(chain)) if gamma is None else gamma)
    occupation = solve_simplex(lp)
    return occupation, extract_stationary_strategy(occupation)


@dataclass(frozen=True)
class MomentRow:
    action: int
    k: int
    spatial: float
    temporal: float
    abs_gap: float
    rel_gap: float


@dataclass(frozen=True)
class ErgodicityReport:
    label: str
    k_max: int
    rows: tuple[MomentRow, ...]

    def worst_rel_gap(self) -> float:
        return max((r.rel_gap for r in self.rows), default=0.0)


def ergodicity_check(occupation: OccupationMeasure, chain: Chain,
                     trajectories: list[Trajectory], k_max: int) -> ErgodicityReport:
    """Compare per-action normalized moments of the LP occupation measure
    (spatial side) against rollout visit frequencies (temporal side).

    States are embedded by their x_first value.  For each action both sides
    are renormalized to sum 1 before taking moments; an action with no mass
    on either side is skipped, and mass on exactly one side reports an
    infinite gap.
    """
    if k_max < 1:
        raise ConfigurationError("k_max must be >= 1")
    if not trajectories:
        raise ConfigurationError("ergodicity check needs trajectories")
    counts = sojourn_statistics(trajectories)
    n = len(chain)
    temporal = np.zeros((n, 3))
    for (s, a), cnt in counts.items():
        temporal[s, a] = cnt
    values = chain.values
    rows = []
    for a in range(3):
        lp_mass = occupation.x[:, a].sum()
        emp_mass = temporal[:, a].sum()
        if lp_mass <= 1e-12 and emp_mass <= 0:
            continue
        for k in range(k_max + 1):
            if lp_mass <= 1e-12 or emp_mass <= 0:
                rows.append(MomentRow(a, k, float("nan"), float("nan"),
                                      float("inf"), float("inf")))
                continue
            spatial = float((values**k) @ occupation.x[:, a] / lp_mass)
            empirical = float((values**k) @ temporal[:, a] / emp_mass)
            abs_gap = abs(spatial - empirical)
            scale = max(abs(spatial), abs(empirical))
            rel_gap = 0.0 if scale < 1e-12 else abs_gap / scale
            rows.append(MomentRow(a, k, spatial, empirical, abs_gap, rel_gap))
    return ErgodicityReport(label=chain.label, k_max=k_max, rows=tuple(rows))


def dump_lp(lp: LPInstance) -> str:
    """Plain-text tabular dump of the LP for external verification."""
    lines = [f"# occupation LP for segment {lp.label} (beta={lp.beta})",
             "# maximize c.x subject to A x = gamma, x >= 0",
             "c " + " ".join(repr(float(v)) for v in lp.objective)]
    for s, row in enumerate(lp.constraints):
        lines.append(f"A[{s}] " + " ".join(repr(float(v)) for v in row))
    lines.append("gamma " + " ".join(repr(float(v)) for v in lp.rhs))
    return "\n".join(lines) + "\n"
