"""Outer (cutting-plane) approximation of the worst-case cost-to-go functions.

Pools are indexed by the function they approximate: ``pool[t]`` bounds the
cost-to-go from stage t, viewed as a function of the state y_{t-1}.  The
function past the horizon (t = T + 1) is identically zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InternalConsistencyError
from .lpsolve import Basis, LinearProgram, SolverConfig, DEFAULT_CONFIG, extend_basis, solve_lp


@dataclass(frozen=True)
class Cut:
    """phi >= value + coeffs @ (y - anchor), valid for the function at index ``t``."""

    t: int
    anchor: np.ndarray
    scenario: np.ndarray
    value: float
    coeffs: np.ndarray
    iteration: int = 0

    @property
    def intercept(self) -> float:
        return float(self.value - self.coeffs @ self.anchor)

    def evaluate(self, y: np.ndarray) -> float:
        return float(self.value + self.coeffs @ (y - self.anchor))


class CutPool:
    """Cuts for one cost-to-go function, deduplicated after rounding to 1e-9."""

    def __init__(self, t: int, N: int, zero: bool = False):
        self.t = t
        self.N = N
        self.zero = zero  # the function past the horizon
        self.cuts: list = []
        self._keys: set = set()

    def __len__(self):
        return len(self.cuts)

    @staticmethod
    def _key(cut: Cut):
        return (tuple(np.round(cut.coeffs, 9).tolist()), round(cut.intercept, 9))

    def add(self, cut: Cut) -> bool:
        """Add ``cut``; returns False if an identical cut is already present."""
        if cut.coeffs.shape != (self.N,) or not np.isfinite(cut.value):
            raise ValueError("malformed cut")
        if self.zero:
            return False
        key = self._key(cut)
        if key in self._keys:
            return False
        self._keys.add(key)
        self.cuts.append(cut)
        return True

    def value(self, y: np.ndarray) -> float:
        """Lower approximation at state ``y`` (never below the trivial bound 0)."""
        if self.zero or not self.cuts:
            return 0.0
        return max(0.0, max(c.evaluate(y) for c in self.cuts))

    def matrix(self):
        """Cut rows as (coefficients, intercepts)."""
        if not self.cuts:
            return np.zeros((0, self.N)), np.zeros(0)
        return np.array([c.coeffs for c in self.cuts]), np.array([c.intercept for c in self.cuts])

    def snapshot(self) -> list:
        return [{"t": c.t, "iteration": c.iteration, "anchor": c.anchor.tolist(), "scenario": c.scenario.tolist(),
                 "value": c.value, "coeffs": c.coeffs.tolist()} for c in self.cuts]


def add_cut(pool: CutPool, cut: Cut) -> CutPool:
    pool.add(cut)
    return pool


def new_cut_pools(T: int, N: int) -> dict:
    """Pools for functions t = 1..T+1; the last one is the zero function."""
    return {t: CutPool(t, N, zero=(t == T + 1)) for t in range(1, T + 2)}


@dataclass
class LowerResult:
    value: float
    y: np.ndarray
    duals: np.ndarray        # multipliers of the stage rows
    phi: float
    cut: Optional[Cut] = None


def build_lower_lp(form, y_prev, xi, pool: CutPool) -> LinearProgram:
    """Stage LP with epigraph variable phi appended as the last column."""
    ncol = form.num_cols
    G_cuts, g_cuts = pool.matrix()
    ncut = G_cuts.shape[0]
    m = form.num_rows
    G = np.zeros((m + ncut, ncol + 1))
    G[:m, :ncol] = form.B
    sc = form.state_cols
    if ncut:
        # phi - coeffs @ y_state >= intercept
        G[m:, ncol] = 1.0
        G[m:, sc] = -G_cuts
    g = np.concatenate([form.rhs(y_prev, xi), g_cuts])
    senses = np.concatenate([form.senses, np.full(ncut, "G")])
    c = np.concatenate([form.b, [1.0]])
    lb = np.concatenate([form.lb, [0.0]])
    ub = np.concatenate([form.ub, [0.0 if pool.zero else np.inf]])
    return LinearProgram(c, G, senses, g, lb, ub)


class LowerSolver:
    """Solves lower-bound stage problems, keeping a warm-start basis per stage."""

    def __init__(self, forms, config: SolverConfig = DEFAULT_CONFIG):
        self.forms = forms
        self.config = config
        self._basis = {}

    def solve(self, t: int, y_prev, xi, pool: CutPool, make_cut: bool = False, iteration: int = 0) -> LowerResult:
        form = self.forms[t - 1]
        lp = build_lower_lp(form, y_prev, xi, pool)
        n, m = lp.num_vars, lp.num_rows
        prev = self._basis.get(t)
        basis = None
        if prev is not None:
            b, m_old = prev
            basis = extend_basis(b, n, m_old, n, m) if m >= m_old else None
        sol = solve_lp(lp, self.config, basis=basis)
        if not sol.optimal:
            raise InternalConsistencyError(f"lower stage {t} LP is {sol.status}")
        self._basis[t] = (sol.basis, m)
        ncol = form.num_cols
        duals = sol.duals[:form.num_rows]
        res = LowerResult(sol.objective, sol.x[:ncol], duals, float(sol.x[ncol]))
        if make_cut:
            coeffs = -form.A.T @ duals
            coeffs[np.abs(coeffs) <= 1e-12 * max(1.0, np.abs(coeffs).max())] = 0.0
            res.cut = Cut(t, np.asarray(y_prev, dtype=float).copy(), np.asarray(xi, dtype=float).copy(),
                          sol.objective, coeffs, iteration)
        return res


def solve_lower_stage(t, y_prev, xi, pool: CutPool, forms, config: SolverConfig = DEFAULT_CONFIG,
                      make_cut: bool = True) -> LowerResult:
    """One-off lower stage solve; ``pool`` approximates the function at index t+1."""
    return LowerSolver(forms, config).solve(t, y_prev, xi, pool, make_cut=make_cut)


def dump_cut_pools(pools: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump({str(t): p.snapshot() for t, p in pools.items()}, fh, indent=1)
