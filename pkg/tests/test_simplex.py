import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from qkdcorr.errors import ContractError
from qkdcorr.simplex import solve_lp


def vertex_optimum(c, A, b, hi):
    """Best objective over all basic solutions of ``A x <= b, 0 <= x <= hi``."""
    n = len(c)
    rows = [(a, v) for a, v in zip(A, b)]
    rows += [(-np.eye(n)[j], 0.0) for j in range(n)]
    rows += [(np.eye(n)[j], hi[j]) for j in range(n) if math.isfinite(hi[j])]
    G = np.array([r[0] for r in rows])
    h = np.array([r[1] for r in rows])
    best = None
    for idx in itertools.combinations(range(len(rows)), n):
        sub = G[list(idx)]
        if abs(np.linalg.det(sub)) < 1e-10:
            continue
        x = np.linalg.solve(sub, h[list(idx)])
        if np.all(G @ x <= h + 1e-9):
            val = float(c @ x)
            best = val if best is None else max(best, val)
    return best


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 5))
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m) + 0.5
    c = rng.normal(size=n)
    hi = np.where(rng.random(n) < 0.5, 3.0, np.inf)
    if np.any(np.isinf(hi)):
        # keep the region bounded so that an optimal vertex exists
        A = np.vstack([A, np.ones(n)])
        b = np.append(b, 5.0)
    sol = solve_lp(c, A, b, 0, hi)
    best = vertex_optimum(c, A, b, hi)
    if best is None:
        assert sol.status == "infeasible"
    else:
        assert sol.ok
        assert sol.objective == pytest.approx(best, abs=1e-9)
        assert sol.residual <= 1e-9


def test_against_highs_on_random_programs():
    rng = np.random.default_rng(7)
    for k in range(400):
        n, m = int(rng.integers(1, 8)), int(rng.integers(1, 12))
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        c = rng.normal(size=n)
        if k % 3 == 0:
            A, b, c = np.round(A), np.round(b), np.round(c)
        sol = solve_lp(c, A, b, 0, 1)
        ref = linprog(-c, A_ub=A, b_ub=b, bounds=[(0, 1)] * n, method="highs")
        if ref.status == 2:
            assert sol.status == "infeasible"
        else:
            assert sol.ok
            assert sol.objective == pytest.approx(-ref.fun, abs=1e-9)


def test_infeasible_and_unbounded():
    assert solve_lp([1.0], [[1.0], [-1.0]], [1.0, -2.0]).status == "infeasible"
    assert solve_lp([1.0, 1.0], [[1.0, -1.0]], [1.0]).status == "unbounded-guarded"


def test_minimize_and_bounds():
    sol = solve_lp([1.0, 2.0], [[-1.0, -1.0]], [-1.0], lo=[0.0, 0.0], hi=[0.4, 5.0], maximize=False)
    assert sol.ok
    assert sol.objective == pytest.approx(0.4 + 2 * 0.6)
    assert np.allclose(sol.x, [0.4, 0.6])


def test_cycling_example_terminates():
    # classic degenerate program on which textbook Dantzig pivoting cycles
    c = np.array([0.75, -150.0, 0.02, -6.0])
    A = np.array([[0.25, -60.0, -0.04, 9.0], [0.5, -90.0, -0.02, 3.0], [0.0, 0.0, 1.0, 0.0]])
    b = np.array([0.0, 0.0, 1.0])
    sol = solve_lp(c, A, b)
    assert sol.ok
    assert sol.objective == pytest.approx(0.05, abs=1e-12)


def test_duals_certify_the_optimum():
    rng = np.random.default_rng(3)
    for _ in range(50):
        A = rng.random((6, 4))
        b = rng.random(6) + 0.5
        c = rng.normal(size=4)
        sol = solve_lp(c, A, b, 0, 1)
        y = np.maximum(sol.duals, 0.0)
        bound = float(b @ y) + float(np.maximum(0.0, c - A.T @ y).sum())
        assert bound - sol.objective <= 1e-10
        assert bound - sol.objective >= -1e-10


def test_rejects_bad_data():
    with pytest.raises(ContractError):
        solve_lp([1.0], [[np.nan]], [1.0])
    with pytest.raises(ContractError):
        solve_lp([1.0], [[1.0]], [1.0, 2.0])
    with pytest.raises(ContractError):
        solve_lp([1.0], [[1.0]], [1.0], lo=[1.0], hi=[0.0])
