"""Dense two-phase simplex for the small linear programs of the estimation step.

Problems have the form ``max c.x  s.t.  A x <= b,  lo <= x <= hi`` with a
few dozen variables.  Box bounds are handled implicitly (nonbasic variables
sit at either bound), phase one drives artificial variables out of the
basis, and phase two optimizes the objective.

Numerical safeguards, all deterministic:

* pricing is Dantzig's rule with lowest-index tie breaking, switching to
  Bland's rule after a run of degenerate pivots so that cycling cannot occur;
* the ratio test is the two-pass Harris test: among rows whose step is within
  a feasibility tolerance of the shortest one, the largest pivot wins (lowest
  index on exact ties) and pivots below ``PIVOT_TOL`` are never taken;
* every ``REFACTOR_EVERY`` pivots, and before optimality is accepted, the
  tableau is rebuilt from the original data for the current basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ContractError

PIVOT_TOL = 1e-11
OPT_TOL = 1e-12
FEAS_TOL = 1e-9
HARRIS_TOL = 1e-12
DEGENERATE_SWITCH = 50
REFACTOR_EVERY = 25

OPTIMAL, UNBOUNDED, PAUSED = 0, 2, 3


@njit(cache=True)
def _iterate(T, basis, is_basic, upper, at_upper, allowed, max_iter, degenerate):
    """Run bounded-variable simplex pivots on ``T``.

    ``T[:m, :ncol]`` is ``B^-1 M``, ``T[:m, ncol]`` the values of the basic
    variables and ``T[m, :ncol]`` the reduced costs ``z_j - c_j`` of a
    maximization.  Returns ``(status, pivots, degenerate_run)``; ``PAUSED``
    means ``max_iter`` pivots were made and the caller should refactor.
    """
    m = T.shape[0] - 1
    ncol = T.shape[1] - 1
    it = 0
    while it < max_iter:
        bland = degenerate >= DEGENERATE_SWITCH
        enter = -1
        best = OPT_TOL
        for j in range(ncol):
            if not allowed[j] or is_basic[j]:
                continue
            d = T[m, j]
            score = d if at_upper[j] else -d
            if score > best or (bland and score > OPT_TOL):
                enter = j
                best = score
                if bland:
                    break
        if enter < 0:
            return OPTIMAL, it, degenerate
        sigma = -1.0 if at_upper[enter] else 1.0

        # Harris pass one: largest step allowed with relaxed bounds
        theta_max = upper[enter]
        for i in range(m):
            a = sigma * T[i, enter]
            if a > PIVOT_TOL:
                lim = (T[i, ncol] + HARRIS_TOL) / a
            elif a < -PIVOT_TOL and np.isfinite(upper[basis[i]]):
                lim = (upper[basis[i]] - T[i, ncol] + HARRIS_TOL) / (-a)
            else:
                continue
            if lim < theta_max:
                theta_max = lim
        if not np.isfinite(theta_max):
            return UNBOUNDED, it, degenerate

        # pass two: largest pivot among rows blocking within theta_max
        leave = -1
        best_piv = 0.0
        theta = 0.0
        to_upper = False
        for i in range(m):
            a = sigma * T[i, enter]
            if a > PIVOT_TOL:
                ti = T[i, ncol] / a
                hits_upper = False
            elif a < -PIVOT_TOL and np.isfinite(upper[basis[i]]):
                ti = (upper[basis[i]] - T[i, ncol]) / (-a)
                hits_upper = True
            else:
                continue
            if ti <= theta_max:
                piv = abs(a)
                if piv > best_piv or (piv == best_piv and leave >= 0 and basis[i] < basis[leave]):
                    best_piv = piv
                    leave = i
                    theta = ti
                    to_upper = hits_upper
        if theta < 0.0:
            theta = 0.0

        if leave < 0 or (np.isfinite(upper[enter]) and upper[enter] <= theta):
            # the entering variable reaches its own opposite bound first
            step = upper[enter]
            for i in range(m):
                T[i, ncol] -= sigma * step * T[i, enter]
            at_upper[enter] = not at_upper[enter]
            degenerate = 0
            it += 1
            continue

        if theta <= 1e-15:
            degenerate += 1
        else:
            degenerate = 0
        start = upper[enter] if at_upper[enter] else 0.0
        for i in range(m):
            T[i, ncol] -= sigma * theta * T[i, enter]
        new_value = start + sigma * theta
        old = basis[leave]
        piv = T[leave, enter]
        for j in range(ncol):
            T[leave, j] /= piv
        for i in range(m + 1):
            if i != leave:
                f = T[i, enter]
                if f != 0.0:
                    for j in range(ncol):
                        T[i, j] -= f * T[leave, j]
        T[leave, ncol] = new_value
        basis[leave] = enter
        is_basic[enter] = True
        is_basic[old] = False
        at_upper[old] = to_upper
        at_upper[enter] = False
        it += 1
    return PAUSED, it, degenerate


@dataclass(frozen=True)
class LPSolution:
    """Outcome of :func:`solve_lp`.  ``x`` and ``objective`` are ``None`` unless optimal."""

    status: str
    objective: float | None
    x: np.ndarray | None
    residual: float
    dual_residual: float
    iterations: int
    duals: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _as_problem(c, A, b, lo, hi):
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, c.size)
    b = np.asarray(b, dtype=float)
    lo = np.zeros(c.size) if lo is None else np.broadcast_to(np.asarray(lo, dtype=float), c.shape).copy()
    hi = np.full(c.size, np.inf) if hi is None else np.broadcast_to(np.asarray(hi, dtype=float), c.shape).copy()
    for name, arr in (("c", c), ("A", A), ("b", b), ("lo", lo)):
        if not np.all(np.isfinite(arr)):
            raise ContractError(f"LP data {name} contains non-finite entries")
    if b.shape != (A.shape[0],):
        raise ContractError("LP right-hand side does not match the constraint matrix")
    if np.any(hi < lo) or np.any(np.isnan(hi)):
        raise ContractError("LP box has an upper bound below its lower bound")
    return c, A, b, lo, hi


class _Tableau:
    """Bounded-variable tableau over the columns ``[A | I | artificials]``."""

    def __init__(self, M, rhs, upper, n_struct):
        self.M = M
        self.rhs = rhs
        self.upper = upper
        m, ncol = M.shape
        self.m, self.ncol = m, ncol
        self.n_struct = n_struct
        # every non-structural column is a signed unit vector: remember where
        self.unit_row = np.argmax(np.abs(M[:, n_struct:]), axis=0)
        self.unit_val = M[self.unit_row, np.arange(n_struct, ncol)]
        self.T = np.zeros((m + 1, ncol + 1))
        self.basis = np.zeros(m, dtype=np.int64)
        self.is_basic = np.zeros(ncol, dtype=np.bool_)
        self.at_upper = np.zeros(ncol, dtype=np.bool_)
        self.allowed = np.ones(ncol, dtype=np.bool_)
        self.cost = np.zeros(ncol)

    def _basis_solve(self, Y: np.ndarray) -> np.ndarray | None:
        """``B^-1 Y`` using that only a few basic columns are structural.

        Rows covered by a basic unit column are eliminated directly; the
        remaining rows form a small square system in the structural columns.
        """
        struct = np.flatnonzero(self.basis < self.n_struct)
        unit = np.flatnonzero(self.basis >= self.n_struct)
        cols = self.basis[unit] - self.n_struct
        covered = self.unit_row[cols]
        rest = np.ones(self.m, dtype=bool)
        rest[covered] = False
        if np.count_nonzero(rest) != struct.size:
            return None
        out = np.empty((self.m,) + Y.shape[1:])
        S = self.M[:, self.basis[struct]]
        if struct.size:
            try:
                xs = np.linalg.solve(S[rest], Y[rest])
            except np.linalg.LinAlgError:
                return None
            out[struct] = xs
            resid = Y[covered] - S[covered] @ xs
        else:
            resid = Y[covered]
        out[unit] = resid / self.unit_val[cols].reshape((-1,) + (1,) * (Y.ndim - 1))
        return out

    def refactor(self) -> bool:
        """Rebuild ``T`` from the original data; ``False`` if the basis is singular."""
        x_n = np.where(self.at_upper & ~self.is_basic, self.upper, 0.0)
        x_n[~np.isfinite(x_n)] = 0.0
        Y = np.empty((self.m, self.ncol + 1))
        Y[:, :self.ncol] = self.M
        Y[:, self.ncol] = self.rhs - self.M @ x_n
        sol = self._basis_solve(Y)
        if sol is None or not np.all(np.isfinite(sol)):
            return False
        self.T[:self.m, :] = sol
        self.set_cost(self.cost)
        return True

    def set_cost(self, cost):
        self.cost = cost
        self.T[self.m, :self.ncol] = cost[self.basis] @ self.T[:self.m, :self.ncol] - cost

    def values(self) -> np.ndarray:
        x = np.where(self.at_upper, self.upper, 0.0)
        x[~np.isfinite(x)] = 0.0
        x[self.basis] = self.T[:self.m, self.ncol]
        return x

    def optimize(self, max_iter: int) -> tuple[int, int]:
        used = 0
        degenerate = 0
        while True:
            budget = min(REFACTOR_EVERY, max_iter - used)
            if budget <= 0:
                return PAUSED, used
            status, it, degenerate = _iterate(self.T, self.basis, self.is_basic, self.upper, self.at_upper,
                                              self.allowed, budget, degenerate)
            used += it
            if status == UNBOUNDED:
                return UNBOUNDED, used
            if it and not self.refactor():
                return PAUSED, used
            if status == OPTIMAL and self._is_optimal():
                # confirmed on the freshly rebuilt tableau
                return OPTIMAL, used

    def _is_optimal(self) -> bool:
        d = self.T[self.m, :self.ncol]
        for j in range(self.ncol):
            if self.is_basic[j] or not self.allowed[j]:
                continue
            if (self.at_upper[j] and d[j] > OPT_TOL) or (not self.at_upper[j] and d[j] < -OPT_TOL):
                return False
        return True


def solve_lp(c, A, b, lo=None, hi=None, maximize: bool = True, max_iter: int = 20000) -> LPSolution:
    """Optimize ``c.x`` over ``{A x <= b, lo <= x <= hi}``."""
    c, A, b, lo, hi = _as_problem(c, A, b, lo, hi)
    n = c.size
    m = A.shape[0]
    rhs = b - A @ lo
    width = hi - lo
    sign = np.where(rhs < 0, -1.0, 1.0)
    art_rows = np.flatnonzero(sign < 0)
    n_art = art_rows.size
    ncol = n + m + n_art
    M = np.zeros((m, ncol))
    M[:, :n] = A * sign[:, None]
    M[:, n:n + m] = np.diag(sign)
    for k, i in enumerate(art_rows):
        M[i, n + m + k] = 1.0
    upper = np.concatenate([width, np.full(m + n_art, np.inf)])
    tab = _Tableau(M, rhs * sign, upper, n)
    tab.basis[:] = np.arange(n, n + m)
    tab.basis[art_rows] = n + m + np.arange(n_art)
    tab.is_basic[tab.basis] = True
    iterations = 0

    if n_art:
        cost = np.zeros(ncol)
        cost[n + m:] = -1.0
        tab.cost = cost
        tab.refactor()
        status, it = tab.optimize(max_iter)
        iterations += it
        if status != OPTIMAL:
            return LPSolution("iteration-limit", None, None, np.inf, np.inf, iterations)
        infeas = float(tab.values()[n + m:].sum())
        if infeas > FEAS_TOL * max(1.0, float(np.abs(rhs).max())):
            return LPSolution("infeasible", None, None, infeas, np.inf, iterations)
        for i in range(m):
            if tab.basis[i] >= n + m:
                row = np.abs(tab.T[i, :n + m]) * ~tab.is_basic[:n + m]
                j = int(np.argmax(row))
                if row[j] > 1e-9:
                    old = tab.basis[i]
                    tab.basis[i] = j
                    tab.is_basic[j] = True
                    tab.is_basic[old] = False
                    tab.at_upper[j] = False
                    tab.refactor()
        tab.allowed[n + m:] = False
        tab.upper[n + m:] = 0.0

    cost = np.zeros(ncol)
    cost[:n] = c if maximize else -c
    tab.cost = cost
    if not tab.refactor():
        return LPSolution("iteration-limit", None, None, np.inf, np.inf, iterations)
    status, it = tab.optimize(max_iter)
    iterations += it
    if status == UNBOUNDED:
        return LPSolution("unbounded-guarded", None, None, np.inf, np.inf, iterations)
    if status != OPTIMAL:
        return LPSolution("iteration-limit", None, None, np.inf, np.inf, iterations)

    x = np.clip(tab.values()[:n], 0.0, width) + lo
    residual = float(max(0.0, np.max(A @ x - b, initial=0.0)))
    d = tab.T[m, :n + m]
    free = ~tab.is_basic[:n + m]
    wrong = np.where(tab.at_upper[:n + m], np.maximum(d, 0.0), np.maximum(-d, 0.0)) * free
    dual_residual = float(wrong.max(initial=0.0))
    # row multipliers of the internal maximization (non-negative at optimum)
    duals = d[n:n + m].copy()
    return LPSolution("optimal", float(c @ x), x, residual, dual_residual, iterations, duals)
