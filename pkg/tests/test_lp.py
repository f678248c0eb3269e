import numpy as np
import pytest

from vpn_reserve.errors import SimplexError
from vpn_reserve.lp import simplex_max, solve_matrix_game


def test_simplex_simple_max():
    # max x1 + 2 x2 st x1 + x2 <= 4, x2 <= 3  ->  x = (1, 3), obj 7
    A = np.array([[1.0, 1.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]])
    b = np.array([4.0, 3.0])
    c = np.array([1.0, 2.0, 0.0, 0.0])
    res = simplex_max(c, A, b)
    assert res.objective == pytest.approx(7.0, abs=1e-9)
    assert np.allclose(res.x[:2], [1.0, 3.0], atol=1e-9)
    assert np.allclose(A @ res.x, b, atol=1e-9)


def test_simplex_detects_infeasible():
    # x1 = -1 with x1 >= 0
    A = np.array([[1.0]])
    b = np.array([-1.0])
    with pytest.raises(SimplexError):
        simplex_max(np.array([1.0]), A, b)


def test_simplex_detects_unbounded():
    # max x1 st x1 - x2 = 0
    A = np.array([[1.0, -1.0]])
    b = np.array([0.0])
    with pytest.raises(SimplexError):
        simplex_max(np.array([1.0, 0.0]), A, b)


def test_simplex_duals_satisfy_strong_duality():
    rng = np.random.default_rng(42)
    for _ in range(20):
        m, n = 4, 9
        A = rng.uniform(-1, 1, size=(m, n))
        x_feas = rng.uniform(0.1, 1.0, size=n)
        b = A @ x_feas
        c = rng.uniform(-1, 1, size=n)
        try:
            res = simplex_max(c, A, b)
        except SimplexError:
            continue  # unbounded random instance
        assert np.allclose(A @ res.x, b, atol=1e-7)
        assert res.objective == pytest.approx(res.duals @ b, abs=1e-6)
        # dual feasibility: y A >= c on all columns
        slack = res.duals @ A - c
        assert slack.min() > -1e-7


def test_simplex_basic_solution_support():
    rng = np.random.default_rng(1)
    A = rng.uniform(0.0, 1.0, size=(3, 12))
    b = A @ rng.uniform(0.5, 1.0, size=12)
    res = simplex_max(-np.ones(12), A, b)
    assert np.count_nonzero(res.x > 1e-9) <= 3


def test_degenerate_lp_terminates():
    # classic cycling-prone degenerate instance (Beale), Bland must terminate
    A = np.array([
        [0.25, -60.0, -0.04, 9.0, 1.0, 0.0, 0.0],
        [0.50, -90.0, -0.02, 3.0, 0.0, 1.0, 0.0],
        [0.00, 0.0, 1.00, 0.0, 0.0, 0.0, 1.0],
    ])
    b = np.array([0.0, 0.0, 1.0])
    c = np.array([0.75, -150.0, 0.02, -6.0, 0.0, 0.0, 0.0])
    res = simplex_max(c, A, b)
    assert res.objective == pytest.approx(0.05, abs=1e-9)


def test_redundant_rows_are_dropped():
    A = np.array([[1.0, 1.0], [2.0, 2.0]])
    b = np.array([1.0, 2.0])
    res = simplex_max(np.array([1.0, 0.0]), A, b)
    assert res.objective == pytest.approx(1.0, abs=1e-9)


def test_matching_pennies():
    sol = solve_matrix_game(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert sol.value == pytest.approx(0.5, abs=1e-9)
    assert np.allclose(sol.row_strategy, [0.5, 0.5], atol=1e-9)
    assert np.allclose(sol.col_strategy, [0.5, 0.5], atol=1e-9)


def test_dominant_row_game():
    sol = solve_matrix_game(np.array([[3.0, 2.0], [1.0, 0.0]]))
    assert sol.value == pytest.approx(2.0, abs=1e-9)
    assert np.allclose(sol.row_strategy, [1.0, 0.0], atol=1e-9)


def test_constant_matrix_game():
    sol = solve_matrix_game(np.full((3, 3), 2.5))
    assert sol.value == pytest.approx(2.5, abs=1e-9)
    assert sol.row_strategy.sum() == pytest.approx(1.0)


def test_matrix_game_against_scipy():
    from scipy.optimize import linprog

    rng = np.random.default_rng(7)
    for _ in range(25):
        M = rng.uniform(-2, 2, size=rng.integers(2, 5, size=2))
        sol = solve_matrix_game(M)
        # oracle: max v st M^T p >= v, sum p = 1 via linprog on (p, v)
        n = M.shape[0]
        A_ub = np.concatenate([-M.T, np.ones((M.shape[1], 1))], axis=1)
        A_eq = np.concatenate([np.ones((1, n)), np.zeros((1, 1))], axis=1)
        ref = linprog(c=np.concatenate([np.zeros(n), [-1.0]]), A_ub=A_ub,
                      b_ub=np.zeros(M.shape[1]), A_eq=A_eq, b_eq=[1.0],
                      bounds=[(0, None)] * n + [(None, None)])
        assert ref.status == 0
        assert sol.value == pytest.approx(ref.x[-1], abs=1e-7)
        # guarantees: row strategy secures the value against every column
        assert (sol.row_strategy @ M).min() >= sol.value - 1e-8
        assert (M @ sol.col_strategy).max() <= sol.value + 1e-8
