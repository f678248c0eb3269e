"""Dense two-phase tableau simplex with Bland's anti-cycling rule, plus the
standard LP reduction for two-person zero-sum matrix games.

Basic (vertex) solutions are the point: the stationary-strategy determinism
argument and the extreme-optimal-action selection both rely on them, so no
interior-point shortcut is acceptable here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SimplexError

_TOL = 1e-9


@dataclass(frozen=True)
class SimplexResult:
    x: np.ndarray
    objective: float
    duals: np.ndarray
    basis: np.ndarray


def simplex_max(c: np.ndarray, A: np.ndarray, b: np.ndarray,
                max_iter: int = 50000) -> SimplexResult:
    """Maximize c.x subject to A x = b, x >= 0.

    Two-phase dense tableau.  The entering variable is the lowest index with
    a favorable reduced cost and ratio ties leave on the lowest basis index
    (Bland), so degenerate instances cannot cycle.  The artificial block of
    the tableau carries B^-1, so the equality duals come straight off the
    final tableau.  Returns a basic optimal solution.
    """
    A = np.asarray(A, dtype=float).copy()
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    tableau = np.concatenate([A, np.eye(m), b[:, None]], axis=1)
    basis = np.arange(n, n + m)
    row_ids = np.arange(m)

    phase1 = np.concatenate([np.zeros(n), -np.ones(m)])
    _run(tableau, basis, phase1, n_real=n + m, max_iter=max_iter)
    if phase1[basis] @ tableau[:, -1] < -1e-7:
        raise SimplexError("infeasible LP")

    tableau, basis, row_ids = _remove_artificial_rows(tableau, basis, row_ids, n)

    phase2 = np.concatenate([c, np.zeros(m)])
    _run(tableau, basis, phase2, n_real=n, max_iter=max_iter)

    x = np.zeros(n)
    keep = basis < n
    x[basis[keep]] = tableau[keep, -1]
    # duals: y = c_B B^-1; the artificial block holds B^-1 for surviving rows
    duals = np.zeros(m)
    duals[row_ids] = phase2[basis] @ tableau[:, n + row_ids]
    duals[neg] *= -1.0
    return SimplexResult(x=x, objective=float(c @ x), duals=duals, basis=basis.copy())


def simplex_min(c, A, b, max_iter: int = 50000) -> SimplexResult:
    res = simplex_max(-np.asarray(c, dtype=float), A, b, max_iter)
    return SimplexResult(x=res.x, objective=-res.objective, duals=-res.duals,
                         basis=res.basis)


def _run(tableau: np.ndarray, basis: np.ndarray, cost: np.ndarray, n_real: int,
         max_iter: int) -> None:
    """Pivot to optimality: Dantzig's rule while the objective moves, Bland's
    lowest-index rule after a degenerate stall (which is what guarantees
    termination)."""
    m = tableau.shape[0]
    stalled = 0
    for _ in range(max_iter):
        cb = cost[basis]
        reduced = cost[:n_real] - cb @ tableau[:, :n_real]
        favorable = np.nonzero(reduced > _TOL)[0]
        if len(favorable) == 0:
            return
        if stalled >= m:
            entering = int(favorable[0])          # Bland: lowest index
        else:
            entering = int(favorable[np.argmax(reduced[favorable])])
        col = tableau[:, entering]
        positive = col > _TOL
        if not positive.any():
            raise SimplexError("unbounded LP")
        ratios = np.full(m, np.inf)
        ratios[positive] = tableau[positive, -1] / col[positive]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + _TOL * (1.0 + abs(best)))[0]
        leaving = ties[np.argmin(basis[ties])]
        stalled = stalled + 1 if best <= _TOL else 0
        _pivot(tableau, leaving, entering)
        basis[leaving] = entering
    raise SimplexError("simplex iteration guard exceeded")


def _pivot(tableau: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])


def _remove_artificial_rows(tableau, basis, row_ids, n):
    """Pivot basic artificials onto real columns; drop genuinely redundant rows."""
    drop = []
    for r in range(tableau.shape[0]):
        if basis[r] >= n:
            real = np.nonzero(np.abs(tableau[r, :n]) > _TOL)[0]
            if len(real):
                _pivot(tableau, r, real[0])
                basis[r] = real[0]
            else:
                drop.append(r)
    if drop:
        keep = np.setdiff1d(np.arange(tableau.shape[0]), drop)
        tableau = tableau[keep]
        basis = basis[keep]
        row_ids = row_ids[keep]
    return tableau, basis, row_ids


@dataclass(frozen=True)
class MatrixGameSolution:
    value: float
    row_strategy: np.ndarray
    col_strategy: np.ndarray


def solve_matrix_game(payoff: np.ndarray) -> MatrixGameSolution:
    """Value and extreme optimal mixed strategies of a zero-sum matrix game.

    ``payoff[i, j]`` is what the column player pays the row player.  Shift to
    positive payoffs, solve min 1.u subject to M'^T u >= 1 for the row
    player, and read the column player's strategy off the duals.  Basic
    solutions make both strategies vertices of their optimal sets.
    """
    M = np.asarray(payoff, dtype=float)
    n_rows, n_cols = M.shape
    shift = 1.0 - M.min()
    Mp = M + shift
    A = np.concatenate([Mp.T, -np.eye(n_cols)], axis=1)
    b = np.ones(n_cols)
    c = np.concatenate([np.ones(n_rows), np.zeros(n_cols)])
    res = simplex_min(c, A, b)
    total = res.x[:n_rows].sum()
    if total <= 0:
        raise SimplexError("degenerate matrix game solve")
    value = 1.0 / total
    row_strategy = res.x[:n_rows] * value
    col_total = res.duals.sum()
    if col_total <= 0:
        raise SimplexError("degenerate matrix game duals")
    col_strategy = np.clip(res.duals / col_total, 0.0, None)
    col_strategy /= col_strategy.sum()
    return MatrixGameSolution(value=float(value - shift), row_strategy=row_strategy,
                              col_strategy=col_strategy)
