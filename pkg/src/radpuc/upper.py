"""Inner (convex-combination) approximation of the worst-case cost-to-go functions.

A pool holds points (y_j, v_j) with v_j an upper value of the function at y_j.
The induced function is ``min sum lam_j v_j  s.t.  sum lam_j y_j = y,
sum lam_j = 1, lam >= 0``, i.e. the lower convex envelope of the points.
The first N+1 points are the vertices of a simplex enclosing the state box,
so the combination system is feasible for every state in the box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InternalConsistencyError
from .lpsolve import LinearProgram, SolverConfig, DEFAULT_CONFIG, extend_basis, solve_lp

INIT = "init"


class CandidatePool:
    def __init__(self, t: int, points: np.ndarray, values: np.ndarray, origins: list):
        self.t = t
        self.points = np.asarray(points, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.origins = list(origins)
        self._index = {self._key(p): j for j, p in enumerate(self.points)}
        self.version = 0

    @staticmethod
    def _key(y):
        return tuple(np.round(y, 9).tolist())

    @property
    def N(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def update(self, y: np.ndarray, value: float, origin) -> bool:
        """Envelope update with the point (y, value); returns True if the pool changed."""
        if not np.isfinite(value):
            raise ValueError("candidate value must be finite")
        y = np.asarray(y, dtype=float)
        k = self._key(y)
        j = self._index.get(k)
        if j is not None:
            if value < self.values[j]:
                self.values[j] = value
                self.origins[j] = origin
                self.version += 1
                return True
            return False
        self._index[k] = len(self.points)
        self.points = np.vstack([self.points, y[None, :]])
        self.values = np.append(self.values, value)
        self.origins.append(origin)
        self.version += 1
        return True

    def snapshot(self) -> list:
        return [{"state": p.tolist(), "value": float(v), "origin": o}
                for p, v, o in zip(self.points, self.values, self.origins)]


def init_candidates(N: int, upper_limits, lower_limits=None, sentinel: float = 0.0, t: int = 0) -> CandidatePool:
    """The N+1 simplex vertices {lo + beta e_n} and lo, with beta = sum(hi - lo)."""
    hi = np.asarray(upper_limits, dtype=float).reshape(N)
    lo = np.zeros(N) if lower_limits is None else np.asarray(lower_limits, dtype=float).reshape(N)
    if not np.all(np.isfinite(hi)) or np.any(hi < lo):
        raise ValueError("state limits must be finite with lower <= upper")
    beta = float((hi - lo).sum())
    pts = np.vstack([lo + beta * np.eye(N), lo[None, :]])
    return CandidatePool(t, pts, np.full(N + 1, float(sentinel)), [INIT] * (N + 1))


def update_envelope(pool: CandidatePool, y, value, origin="update") -> CandidatePool:
    pool.update(y, value, origin)
    return pool


def combination_lp(pool: CandidatePool, y) -> LinearProgram:
    J, N = pool.points.shape
    G = np.vstack([pool.points.T, np.ones((1, J))])
    g = np.concatenate([np.asarray(y, dtype=float), [1.0]])
    return LinearProgram(pool.values, G, "E" * (N + 1), g, np.zeros(J), np.full(J, np.inf))


def combination_value(pool: CandidatePool, y, config: SolverConfig = DEFAULT_CONFIG) -> float:
    """Induced upper function at ``y``; +inf if y is outside the hull of the pool."""
    sol = solve_lp(combination_lp(pool, y), config)
    if not sol.optimal:
        return np.inf
    return sol.objective


def combination_feasible(pool: CandidatePool, y, config: SolverConfig = DEFAULT_CONFIG) -> bool:
    lp = combination_lp(pool, y)
    lp.c = np.zeros_like(lp.c)
    return solve_lp(lp, config).optimal


def build_upper_lp(form, y_prev, xi, pool: CandidatePool) -> LinearProgram:
    """Primal upper problem: columns (y, lam); rows = stage rows, combination rows, convexity."""
    ncol, m = form.num_cols, form.num_rows
    J, N = pool.points.shape
    G = np.zeros((m + N + 1, ncol + J))
    G[:m, :ncol] = form.B
    sc = form.state_cols
    G[m + np.arange(N), sc] = 1.0
    G[m:m + N, ncol:] = -pool.points.T
    G[m + N, ncol:] = 1.0
    g = np.concatenate([form.rhs(y_prev, xi), np.zeros(N), [1.0]])
    senses = np.concatenate([form.senses, np.full(N + 1, "E")])
    c = np.concatenate([form.b, pool.values])
    lb = np.concatenate([form.lb, np.zeros(J)])
    ub = np.concatenate([form.ub, np.full(J, np.inf)])
    return LinearProgram(c, G, senses, g, lb, ub)


@dataclass
class UpperResult:
    value: float
    y: np.ndarray
    weights: np.ndarray
    duals: np.ndarray


class UpperSolver:
    """Primal upper evaluations with a warm-start basis per stage."""

    def __init__(self, forms, config: SolverConfig = DEFAULT_CONFIG):
        self.forms = forms
        self.config = config
        self._basis = {}

    def solve(self, t: int, y_prev, xi, pool: CandidatePool) -> UpperResult:
        form = self.forms[t - 1]
        lp = build_upper_lp(form, y_prev, xi, pool)
        n, m = lp.num_vars, lp.num_rows
        basis = None
        prev = self._basis.get(t)
        if prev is not None:
            b, n_old = prev
            if n >= n_old:
                basis = extend_basis(b, n_old, m, n, m)
        sol = solve_lp(lp, self.config, basis=basis)
        if not sol.optimal:
            raise InternalConsistencyError(f"upper stage {t} LP is {sol.status}")
        self._basis[t] = (sol.basis, n)
        ncol = form.num_cols
        return UpperResult(sol.objective, sol.x[:ncol], sol.x[ncol:], sol.duals)


def eval_upper_primal(t, y_prev, xi, pool: CandidatePool, forms, config: SolverConfig = DEFAULT_CONFIG) -> UpperResult:
    """Stage cost plus convex-combination cost-to-go; ``pool`` is for index t+1."""
    return UpperSolver(forms, config).solve(t, y_prev, xi, pool)


def dump_candidate_pools(pools: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump({str(t): p.snapshot() for t, p in pools.items()}, fh, indent=1)


def new_candidate_pools(case, uset) -> dict:
    """Initialized pools for functions t = 1..T+1 with a-priori valid sentinel values."""
    from .model import sentinel_value, state_bounds

    lo, hi = state_bounds(case)
    N = lo.size
    return {t: init_candidates(N, hi, lo, sentinel_value(case, uset, t), t) for t in range(1, case.T + 2)}
