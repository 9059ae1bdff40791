"""Worst-case scenario generation for the upper-bound stage problems.

For fixed previous state the upper problem value is convex in the scenario,
so its maximum over the uncertainty set sits at a vertex.  Dualizing the
inner minimization gives a bilinear maximization in (pi, xi); it is solved
exactly by vertex enumeration or a Big-M MILP, or relaxed to an LP with
McCormick envelopes on the products eta_r * xi_r.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InternalConsistencyError, ResourceError
from .lpsolve import LinearProgram, MixedProgram, SolverConfig, DEFAULT_CONFIG, solve_lp, solve_milp
from .upper import CandidatePool, UpperSolver, build_upper_lp

VERTEX_CAP_EXP = 20


# -- uncertainty-set vertices ---------------------------------------------------------------

def vertex_count(uset, t: int) -> int:
    lo, hi, nom = uset.lower[t - 1], uset.upper[t - 1], uset.nominal[t - 1]
    if uset.budget is None:
        return 2 ** int(np.sum(hi > lo))
    gam = float(uset.budget[t - 1])
    k = int(math.floor(gam + 1e-12))
    frac = gam - k
    free = int(np.sum(hi > lo))
    if k >= free:
        return 2 ** free
    n = math.comb(free, k) * 2 ** k
    if frac > 1e-12:
        n *= (free - k) * 2
    return n


def budget_vertices(uset, t: int) -> np.ndarray:
    """Vertices of the stage-t set in a fixed deterministic order (rows)."""
    lo, hi, nom = uset.lower[t - 1], uset.upper[t - 1], uset.nominal[t - 1]
    nr = lo.size
    if vertex_count(uset, t) > 2 ** VERTEX_CAP_EXP:
        raise ResourceError(f"stage {t} has more than 2^{VERTEX_CAP_EXP} vertices; use the bigM method")
    free = [r for r in range(nr) if hi[r] > lo[r]]
    if uset.budget is None or uset.budget[t - 1] >= len(free):
        out = []
        for combo in itertools.product((0, 1), repeat=len(free)):
            v = lo.copy()
            for r, c in zip(free, combo):
                v[r] = hi[r] if c else lo[r]
            out.append(v)
        return np.array(out).reshape(-1, nr)
    gam = float(uset.budget[t - 1])
    k = int(math.floor(gam + 1e-12))
    frac = gam - k
    out = []
    seen = set()
    for S in itertools.combinations(free, k):
        rest = [r for r in free if r not in S] if frac > 1e-12 else [None]
        for signs in itertools.product((1, -1), repeat=k):
            for p in rest:
                for ps in ((1, -1) if p is not None else (0,)):
                    v = nom.copy()
                    for r, s in zip(S, signs):
                        v[r] = hi[r] if s > 0 else lo[r]
                    if p is not None:
                        v[p] = nom[p] + frac * ((hi[p] - nom[p]) if ps > 0 else -(nom[p] - lo[p]))
                    key = tuple(np.round(v, 12))
                    if key not in seen:
                        seen.add(key)
                        out.append(v)
    return np.array(out).reshape(-1, nr)


def round_to_budget_vertex(uset, t: int, xi: np.ndarray) -> np.ndarray:
    """Largest-deviation rounding of a scenario onto a budget vertex."""
    lo, hi, nom = uset.lower[t - 1], uset.upper[t - 1], uset.nominal[t - 1]
    gam = float(uset.budget[t - 1])
    up = xi >= nom
    half = np.where(up, hi - nom, nom - lo)
    ratio = np.divide(np.abs(xi - nom), half, out=np.zeros_like(xi), where=half > 0)
    order = sorted(range(xi.size), key=lambda r: (-ratio[r], r))
    out = nom.copy()
    left = gam
    for r in order:
        if left <= 1e-12 or ratio[r] <= 0:
            break
        f = min(1.0, left)
        out[r] = nom[r] + f * (half[r] if up[r] else -half[r])
        left -= f
    return out


def best_response_vertex(uset, t: int, eta: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Vertex maximizing eta . xi over the stage set; coordinates with eta ~ 0 keep ``fallback``."""
    lo, hi, nom = uset.lower[t - 1], uset.upper[t - 1], uset.nominal[t - 1]
    tol = 1e-9 * max(1.0, float(np.abs(eta).max(initial=0.0)))
    if uset.budget is None:
        return np.where(eta > tol, hi, np.where(eta < -tol, lo, fallback))
    gain = np.where(eta > tol, eta * (hi - nom), np.where(eta < -tol, -eta * (nom - lo), 0.0))
    order = sorted(range(eta.size), key=lambda r: (-gain[r], r))
    out = nom.copy()
    left = float(uset.budget[t - 1])
    for r in order:
        if left <= 1e-12 or gain[r] <= 0:
            break
        f = min(1.0, left)
        out[r] = nom[r] + f * ((hi[r] - nom[r]) if eta[r] > 0 else -(nom[r] - lo[r]))
        left -= f
    return out


# -- the dual of a stage-type LP ------------------------------------------------------------

@dataclass
class DualForm:
    """max (g0 + H xi) @ pi + lbf @ mu - ubf @ nu  s.t.  G.T pi + E_mu mu - E_nu nu = c.

    Variables are ordered (pi, mu, nu); ``pi`` is nonnegative on ``>=`` rows and
    free on equality rows.
    """

    G: np.ndarray
    c: np.ndarray
    pi_lb: np.ndarray
    mu_cols: np.ndarray
    nu_cols: np.ndarray
    lbf: np.ndarray
    ubf: np.ndarray
    g0: np.ndarray
    H: np.ndarray

    @property
    def m(self):
        return self.G.shape[0]

    @property
    def nvar(self):
        return self.m + self.mu_cols.size + self.nu_cols.size

    def constraint_matrix(self):
        n = self.G.shape[1]
        M = np.zeros((n, self.nvar))
        M[:, :self.m] = self.G.T
        M[self.mu_cols, self.m + np.arange(self.mu_cols.size)] = 1.0
        M[self.nu_cols, self.m + self.mu_cols.size + np.arange(self.nu_cols.size)] = -1.0
        return M

    def objective(self):
        return np.concatenate([self.g0, self.lbf, -self.ubf])

    def bounds(self):
        lb = np.concatenate([self.pi_lb, np.zeros(self.mu_cols.size + self.nu_cols.size)])
        return lb, np.full(self.nvar, np.inf)


def dualize(lp: LinearProgram, H: np.ndarray) -> DualForm:
    """Dual of ``lp`` whose right-hand side is ``lp.g + H xi``."""
    if np.any(lp.senses == "L"):
        raise ValueError("dualize expects only >= and = rows")
    mu = np.flatnonzero(np.isfinite(lp.lb))
    nu = np.flatnonzero(np.isfinite(lp.ub))
    pi_lb = np.where(lp.senses == "G", 0.0, -np.inf)
    return DualForm(lp.G, lp.c, pi_lb, mu, nu, lp.lb[mu], lp.ub[nu], lp.g, H)


# -- McCormick envelope rows -----------------------------------------------------------------

def mccormick_rows(eta_lo, eta_hi, xi_lo, xi_hi):
    """Rows ``a_th*theta + a_eta*eta + a_xi*xi >= rhs`` of the four envelopes, per coordinate.

    Returns arrays (a_th, a_eta, a_xi, rhs) each of shape (4, Nr).
    """
    eta_lo, eta_hi = np.asarray(eta_lo, float), np.asarray(eta_hi, float)
    xi_lo, xi_hi = np.asarray(xi_lo, float), np.asarray(xi_hi, float)
    one = np.ones_like(eta_lo)
    a_th = np.array([one, one, -one, -one])
    a_eta = np.array([-xi_lo, -xi_hi, xi_lo, xi_hi])
    a_xi = np.array([-eta_lo, -eta_hi, eta_hi, eta_lo])
    rhs = np.array([-eta_lo * xi_lo, -eta_hi * xi_hi, eta_hi * xi_lo, eta_lo * xi_hi])
    return a_th, a_eta, a_xi, rhs


def mccormick_admits(theta, eta, xi, eta_lo, eta_hi, xi_lo, xi_hi, tol=1e-12) -> bool:
    a_th, a_eta, a_xi, rhs = mccormick_rows(*(np.atleast_1d(v) for v in (eta_lo, eta_hi, xi_lo, xi_hi)))
    act = a_th * np.atleast_1d(theta) + a_eta * np.atleast_1d(eta) + a_xi * np.atleast_1d(xi)
    return bool(np.all(act >= rhs - tol))


# -- worst-case generator ------------------------------------------------------------------------

@dataclass
class WorstCaseResult:
    scenario: np.ndarray
    value: float
    method: str


class WorstCaseGenerator:
    """Worst-case scenarios for the upper problems of one compiled schedule.

    eta bounds are computed once per stage and cached: later pools only add
    dual constraints, so earlier bounds stay valid.
    """

    def __init__(self, forms, uset, config: SolverConfig = DEFAULT_CONFIG):
        self.forms = forms
        self.uset = uset
        self.config = config
        self.upper = UpperSolver(forms, config)
        self._eta = {}
        self._basis = {}

    # the dual of the primal upper problem at a given previous state
    def _dual(self, t, y_prev, pool: CandidatePool) -> DualForm:
        form = self.forms[t - 1]
        lp = build_upper_lp(form, y_prev, np.zeros(self.uset.nr), pool)
        H = np.vstack([form.H, np.zeros((lp.num_rows - form.num_rows, self.uset.nr))])
        return dualize(lp, H)

    def eta_bounds(self, t, pool: CandidatePool):
        if t in self._eta:
            return self._eta[t]
        d = self._dual(t, np.zeros(self.forms[t - 1].N), pool)
        M = d.constraint_matrix()
        lb, ub = d.bounds()
        nr = self.uset.nr
        lo = np.zeros(nr)
        hi = np.zeros(nr)
        for r in range(nr):
            cvec = np.concatenate([d.H[:, r], np.zeros(d.nvar - d.m)])
            for sign, store in ((1.0, lo), (-1.0, hi)):
                sol = solve_lp(LinearProgram(sign * cvec, M, "E" * M.shape[0], d.c, lb, ub), self.config)
                if not sol.optimal:
                    raise InternalConsistencyError(f"eta bound LP at stage {t} is {sol.status}")
                store[r] = sign * sol.objective
        lo = np.minimum(0.0, lo)
        self._eta[t] = (lo, hi)
        return lo, hi

    def mccormick(self, t, y_prev, pool: CandidatePool) -> WorstCaseResult:
        u = self.uset
        nr = u.nr
        xlo, xhi = u.lower[t - 1], u.upper[t - 1]
        if nr == 0:
            return self._fixed(t, y_prev, pool, np.zeros(0), "mccormick")
        elo, ehi = self.eta_bounds(t, pool)
        d = self._dual(t, y_prev, pool)
        M = d.constraint_matrix()
        nd = d.nvar
        budget = u.budget is not None
        nb = 2 * nr if budget else 0
        # columns: dual vars | xi | eta | theta | d+ d-
        ix, ie, it = nd, nd + nr, nd + 2 * nr
        nv = nd + 3 * nr + nb
        n_con = M.shape[0]
        rows = n_con + nr + 4 * nr + (nr + 1 if budget else 0)
        G = np.zeros((rows, nv))
        g = np.zeros(rows)
        senses = []
        G[:n_con, :nd] = M
        g[:n_con] = d.c
        senses += ["E"] * n_con
        r0 = n_con
        # eta - H^T pi = 0
        G[r0:r0 + nr, :d.m] = -d.H.T
        G[r0 + np.arange(nr), ie + np.arange(nr)] = 1.0
        senses += ["E"] * nr
        r0 += nr
        a_th, a_eta, a_xi, rhs = mccormick_rows(elo, ehi, xlo, xhi)
        for k in range(4):
            rr = r0 + k * nr + np.arange(nr)
            G[rr, it + np.arange(nr)] = a_th[k]
            G[rr, ie + np.arange(nr)] = a_eta[k]
            G[rr, ix + np.arange(nr)] = a_xi[k]
            g[rr] = rhs[k]
        senses += ["G"] * (4 * nr)
        r0 += 4 * nr
        lb = np.concatenate([d.bounds()[0], xlo, elo, np.full(nr, -np.inf)])
        ub = np.concatenate([d.bounds()[1], xhi, ehi, np.full(nr, np.inf)])
        if budget:
            nom = u.nominal[t - 1]
            hp, hm = xhi - nom, nom - xlo
            idp, idm = it + nr, it + 2 * nr
            G[r0 + np.arange(nr), ix + np.arange(nr)] = 1.0
            G[r0 + np.arange(nr), idp + np.arange(nr)] = -1.0
            G[r0 + np.arange(nr), idm + np.arange(nr)] = 1.0
            g[r0:r0 + nr] = nom
            senses += ["E"] * nr
            G[r0 + nr, idp:idp + nr] = -np.divide(1.0, hp, out=np.zeros(nr), where=hp > 0)
            G[r0 + nr, idm:idm + nr] = -np.divide(1.0, hm, out=np.zeros(nr), where=hm > 0)
            g[r0 + nr] = -u.budget[t - 1]
            senses += ["G"]
            lb = np.concatenate([lb, np.zeros(2 * nr)])
            ub = np.concatenate([ub, hp, hm])
        c = np.zeros(nv)
        c[:nd] = -d.objective()
        c[it:it + nr] = -1.0
        # the layout only changes when the pool grows; reuse the last basis otherwise
        prev = self._basis.get(t)
        basis = prev[0] if prev is not None and prev[1] == G.shape else None
        sol = solve_lp(LinearProgram(c, G, senses, g, lb, ub), self.config, basis)
        if not sol.optimal:
            raise InternalConsistencyError(f"McCormick LP at stage {t} is {sol.status}")
        self._basis[t] = (sol.basis, G.shape)
        xi = np.clip(sol.x[ix:ix + nr], xlo, xhi)
        if budget and u.budget_usage(t, xi) >= u.budget[t - 1] - 1e-9:
            dev = np.abs(xi - u.nominal[t - 1])
            half = np.where(xi >= u.nominal[t - 1], xhi - u.nominal[t - 1], u.nominal[t - 1] - xlo)
            ratio = np.divide(dev, half, out=np.zeros(nr), where=half > 0)
            if np.any((ratio > 1e-9) & (ratio < 1 - 1e-9)):
                xi = round_to_budget_vertex(u, t, xi)
        # the relaxed optimum is often interior; the best response to its eta is a vertex
        vert = best_response_vertex(u, t, sol.x[ie:ie + nr], xi)
        if not np.allclose(vert, xi, rtol=0.0, atol=1e-12):
            if self.upper.solve(t, y_prev, xi, pool).value > self.upper.solve(t, y_prev, vert, pool).value:
                vert = xi
        return WorstCaseResult(vert, -sol.objective, "mccormick")

    def _fixed(self, t, y_prev, pool, xi, method):
        res = self.upper.solve(t, y_prev, xi, pool)
        return WorstCaseResult(np.asarray(xi, dtype=float), res.value, method)

    def exact(self, t, y_prev, pool: CandidatePool, method: str = "vertex") -> WorstCaseResult:
        if method == "vertex":
            return self._vertex(t, y_prev, pool)
        if method in ("bigm", "bigM"):
            return self._bigm(t, y_prev, pool)
        raise ValueError(f"unknown exact method {method!r}")

    def _vertex(self, t, y_prev, pool):
        verts = budget_vertices(self.uset, t)
        best_v, best_xi = -np.inf, None
        for xi in verts:
            v = self.upper.solve(t, y_prev, xi, pool).value
            # strict improvement keeps the earliest vertex on ties
            if v > best_v + 1e-9 * (1.0 + abs(best_v) if np.isfinite(best_v) else 1.0):
                best_v, best_xi = v, xi
        return WorstCaseResult(np.array(best_xi, dtype=float), best_v, "vertex")

    def _bigm(self, t, y_prev, pool):
        u = self.uset
        nr = u.nr
        xlo, xhi, nom = u.lower[t - 1], u.upper[t - 1], u.nominal[t - 1]
        if nr == 0:
            return self._fixed(t, y_prev, pool, np.zeros(0), "bigm")
        budget = u.budget is not None
        if budget and abs(u.budget[t - 1] - round(u.budget[t - 1])) > 1e-12:
            raise ValueError("bigM mode requires an integral budget")
        elo, ehi = self.eta_bounds(t, pool)
        d = self._dual(t, y_prev, pool)
        M = d.constraint_matrix()
        nd = d.nvar
        # coordinates with width; fixed ones contribute eta * lower
        base = nom if budget else xlo
        if budget:
            dirs = [(r, xhi[r] - nom[r]) for r in range(nr) if xhi[r] > nom[r]] + \
                   [(r, -(nom[r] - xlo[r])) for r in range(nr) if nom[r] > xlo[r]]
        else:
            dirs = [(r, xhi[r] - xlo[r]) for r in range(nr) if xhi[r] > xlo[r]]
        nz = len(dirs)
        ie, iz, iw = nd, nd + nr, nd + nr + nz
        nv = nd + nr + 2 * nz
        n_con = M.shape[0]
        rows_extra = nr + 4 * nz
        pair_rows = []
        if budget:
            for r in range(nr):
                ks = [k for k, (rr, _) in enumerate(dirs) if rr == r]
                if len(ks) == 2:
                    pair_rows.append(ks)
            rows_extra += len(pair_rows) + 1
        G = np.zeros((n_con + rows_extra, nv))
        g = np.zeros(n_con + rows_extra)
        senses = ["E"] * n_con
        G[:n_con, :nd] = M
        g[:n_con] = d.c
        r0 = n_con
        G[r0:r0 + nr, :d.m] = -d.H.T
        G[r0 + np.arange(nr), ie + np.arange(nr)] = 1.0
        senses += ["E"] * nr
        r0 += nr
        for k, (r, _) in enumerate(dirs):
            lo_, hi_ = elo[r], ehi[r]
            # w <= hi z ; w >= lo z ; w <= eta - lo (1 - z) ; w >= eta - hi (1 - z)
            for coef_w, coef_z, coef_eta, rhs in ((-1.0, hi_, 0.0, 0.0), (1.0, -lo_, 0.0, 0.0),
                                                  (-1.0, lo_, 1.0, lo_), (1.0, -hi_, -1.0, -hi_)):
                G[r0, iw + k] = coef_w
                G[r0, iz + k] = coef_z
                G[r0, ie + r] = coef_eta
                g[r0] = rhs
                senses.append("G")
                r0 += 1
        if budget:
            for ks in pair_rows:
                G[r0, iz + np.array(ks)] = -1.0
                g[r0] = -1.0
                senses.append("G")
                r0 += 1
            G[r0, iz:iz + nz] = -1.0
            g[r0] = -round(u.budget[t - 1])
            senses.append("G")
            r0 += 1
        lb = np.concatenate([d.bounds()[0], elo, np.zeros(nz), np.full(nz, -np.inf)])
        ub = np.concatenate([d.bounds()[1], ehi, np.ones(nz), np.full(nz, np.inf)])
        c = np.zeros(nv)
        c[:nd] = -d.objective()
        c[ie:ie + nr] = -base
        for k, (_, step) in enumerate(dirs):
            c[iw + k] = -step
        mp = MixedProgram(LinearProgram(c, G, senses, g, lb, ub), iz + np.arange(nz))
        sol = solve_milp(mp, self.config)
        if not sol.optimal:
            raise InternalConsistencyError(f"Big-M worst case at stage {t} is {sol.status}")
        xi = base.copy()
        z = np.round(sol.x[iz:iz + nz])
        for k, (r, step) in enumerate(dirs):
            xi[r] += step * z[k]
        return WorstCaseResult(np.clip(xi, xlo, xhi), -sol.objective, "bigm")


def worst_case_mccormick(t, y_prev, pool, forms, uset, config: SolverConfig = DEFAULT_CONFIG):
    r = WorstCaseGenerator(forms, uset, config).mccormick(t, y_prev, pool)
    return r.scenario, r.value


def worst_case_exact(t, y_prev, pool, forms, uset, mode="vertex", config: SolverConfig = DEFAULT_CONFIG):
    r = WorstCaseGenerator(forms, uset, config).exact(t, y_prev, pool, mode)
    return r.scenario, r.value
