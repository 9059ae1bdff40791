"""Dense bounded revised simplex and best-bound branch-and-bound.

Every LP and MILP in the package goes through :func:`solve_lp` or
:func:`solve_milp`.  Problems are stated as::

    minimize    c @ v + obj_const
    subject to  G @ v  (<=, =, >=)  g
                lb <= v <= ub

Row duals follow the minimization convention: ``>=`` rows carry nonnegative
multipliers, ``<=`` rows nonpositive ones, equality rows are free.  The
reduced costs satisfy ``c - G.T @ duals``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import NumericalBreakdownError, NodeLimitError

LE, EQ, GE = "L", "E", "G"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

# nonbasic status codes
_AT_LB, _AT_UB, _FREE = 0, 1, 2


@dataclass(frozen=True)
class SolverConfig:
    """All solver tolerances and limits in one place."""

    primal_tol: float = 1e-9
    dual_tol: float = 1e-9
    dual_rel_tol: float = 1e-12
    pivot_tol: float = 1e-10
    integrality_tol: float = 1e-6
    degenerate_limit: int = 50
    refactor_every: int = 50
    max_iterations: int = 200_000
    max_refactor_attempts: int = 3
    node_limit: int = 200_000
    prune_tol: float = 1e-7


DEFAULT_CONFIG = SolverConfig()
DROP_TOL = 1e-13


@dataclass
class LinearProgram:
    c: np.ndarray
    G: np.ndarray
    senses: Sequence[str]
    g: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    obj_const: float = 0.0
    var_names: Optional[list] = None
    row_names: Optional[list] = None
    row_meta: Optional[list] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.g = np.asarray(self.g, dtype=float).ravel()
        self.lb = np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.asarray(self.ub, dtype=float).ravel()
        self.senses = np.asarray(list(self.senses), dtype="<U1")
        m = self.G.shape[0]
        if self.g.size != m or self.senses.size != m:
            raise ValueError(f"row data mismatch: G has {m} rows, g {self.g.size}, senses {self.senses.size}")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound vectors do not match the number of variables")
        bad = set(self.senses.tolist()) - {LE, EQ, GE}
        if bad:
            raise ValueError(f"unknown row senses {sorted(bad)}")
        if np.any(self.lb > self.ub):
            j = int(np.argmax(self.lb > self.ub))
            raise ValueError(f"variable {self._vname(j)} has lb > ub")
        if np.any(np.isposinf(self.lb)) or np.any(np.isneginf(self.ub)):
            raise ValueError("lower bounds must be < +inf and upper bounds > -inf")

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_rows(self) -> int:
        return self.G.shape[0]

    def _vname(self, j):
        return self.var_names[j] if self.var_names else f"v{j}"

    def _rname(self, i):
        return self.row_names[i] if self.row_names else f"r{i}"

    def copy(self) -> "LinearProgram":
        return LinearProgram(
            self.c.copy(), self.G.copy(), self.senses.copy(), self.g.copy(),
            self.lb.copy(), self.ub.copy(), self.obj_const,
            list(self.var_names) if self.var_names else None,
            list(self.row_names) if self.row_names else None,
            list(self.row_meta) if self.row_meta else None,
        )


@dataclass
class MixedProgram:
    lp: LinearProgram
    binaries: np.ndarray

    def __post_init__(self):
        self.binaries = np.asarray(self.binaries, dtype=int).ravel()
        n = self.lp.num_vars
        if self.binaries.size and (self.binaries.min() < 0 or self.binaries.max() >= n):
            raise ValueError("binary index out of range")
        lb, ub = self.lp.lb[self.binaries], self.lp.ub[self.binaries]
        if np.any(lb < 0) or np.any(ub > 1):
            raise ValueError("binary variables must be bounded within [0, 1]")


@dataclass
class Basis:
    head: np.ndarray     # basic variable per row (internal indexing, logicals after structurals)
    status: np.ndarray   # nonbasic status per internal variable


@dataclass
class LpSolution:
    status: str
    x: Optional[np.ndarray] = None
    objective: float = math.nan
    duals: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    iterations: int = 0
    basis: Optional[Basis] = None
    nodes: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Simplex:
    """Working state of one solve.  Internal variables are ``[v, r]`` with
    ``G v + r = g`` so the slack block is the identity."""

    def __init__(self, lp: LinearProgram, cfg: SolverConfig):
        self.cfg = cfg
        m, n = lp.num_rows, lp.num_vars
        self.m, self.n = m, n
        G = np.array(lp.G, dtype=float)
        # round-off entries next to O(1) data only hurt conditioning
        rowmax = np.abs(G).max(axis=1, initial=0.0)
        G[np.abs(G) <= DROP_TOL * rowmax[:, None]] = 0.0
        self.A = np.hstack([G, np.eye(m)])
        self.b = lp.g.copy()
        rl = np.zeros(m)
        ru = np.zeros(m)
        s = lp.senses
        ru[s == LE] = np.inf
        rl[s == GE] = -np.inf
        self.lo = np.concatenate([lp.lb, rl])
        self.up = np.concatenate([lp.ub, ru])
        self.cost = np.concatenate([lp.c, np.zeros(m)])
        self.N = n + m
        self.ptol = cfg.primal_tol * (1.0 + np.maximum(np.abs(np.where(np.isfinite(self.lo), self.lo, 0.0)),
                                                       np.abs(np.where(np.isfinite(self.up), self.up, 0.0))))
        self.colmax = np.abs(self.A).max(axis=0)
        self.fixed = self.lo == self.up
        self.iterations = 0

    # -- basis handling -------------------------------------------------
    def _default_status(self):
        st = np.full(self.N, _AT_LB, dtype=np.int8)
        st[~np.isfinite(self.lo) & np.isfinite(self.up)] = _AT_UB
        st[~np.isfinite(self.lo) & ~np.isfinite(self.up)] = _FREE
        return st

    def install(self, basis: Optional[Basis]):
        m = self.m
        if basis is not None and basis.head.size == m and basis.status.size == self.N:
            head = basis.head.astype(int).copy()
            status = basis.status.astype(np.int8).copy()
            # repair statuses that are no longer valid for the current bounds
            bad_lb = (status == _AT_LB) & ~np.isfinite(self.lo)
            bad_ub = (status == _AT_UB) & ~np.isfinite(self.up)
            status[bad_lb | bad_ub] = self._default_status()[bad_lb | bad_ub]
            try:
                self.head = head
                self.status = status
                self.is_basic = np.zeros(self.N, dtype=bool)
                self.is_basic[head] = True
                self.refactor()
                return
            except NumericalBreakdownError:
                pass
        self.head = np.arange(self.n, self.n + m)
        self.status = self._default_status()
        self.is_basic = np.zeros(self.N, dtype=bool)
        self.is_basic[self.head] = True
        self.refactor()

    def nonbasic_values(self):
        xn = np.zeros(self.N)
        xn[self.status == _AT_LB] = self.lo[self.status == _AT_LB]
        xn[self.status == _AT_UB] = self.up[self.status == _AT_UB]
        xn[self.is_basic] = 0.0
        return xn

    def refactor(self):
        B = self.A[:, self.head]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdownError("singular basis matrix") from exc
        # condition estimate of the column-equilibrated basis, so big-M columns do not trip it
        if not np.all(np.isfinite(self.Binv)) or \
                (np.abs(self.Binv) * self.colmax[self.head][:, None]).max() > 1e13:
            raise NumericalBreakdownError("ill-conditioned basis matrix")
        self.since_refactor = 0
        self.recompute_primal()

    def repair(self):
        """Swap dependent basic columns for logicals, then refactor."""
        m = self.m
        B = self.A[:, self.head]
        _, R, piv = scipy.linalg.qr(B, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-9 * max(diag.max(initial=0.0), 1.0)))
        keep = self.head[piv[:rank]]
        drop = self.head[piv[rank:]]
        Q, _ = np.linalg.qr(self.A[:, keep]) if rank else (np.zeros((m, 0)), None)
        resid = np.eye(m) - Q @ Q.T
        _, _, rpiv = scipy.linalg.qr(resid, pivoting=True)
        add = self.n + rpiv[:m - rank]
        for j in drop:
            self.is_basic[j] = False
            self.status[j] = self._default_status()[j]
        new_head = self.head.copy()
        new_head[piv[rank:]] = add
        self.head = new_head
        self.is_basic[add] = True
        self.refactor()

    def recompute_primal(self):
        xn = self.nonbasic_values()
        self.x = xn
        self.x[self.head] = self.Binv @ (self.b - self.A @ xn)

    # -- main loop --------------------------------------------------------
    def run(self) -> str:
        cfg = self.cfg
        degenerate_run = 0
        bland = False
        attempts = 0
        while True:
            if self.iterations >= cfg.max_iterations:
                raise NumericalBreakdownError(f"iteration limit {cfg.max_iterations} reached")
            xb = self.x[self.head]
            lo_b, up_b, tol_b = self.lo[self.head], self.up[self.head], self.ptol[self.head]
            below = xb < lo_b - tol_b
            above = xb > up_b + tol_b
            phase1 = bool(below.any() or above.any())
            if phase1:
                cb = np.where(below, -1.0, np.where(above, 1.0, 0.0))
                cost_n = None
            else:
                cb = self.cost[self.head]
                cost_n = self.cost
            y = cb @ self.Binv
            d = -(y @ self.A) if cost_n is None else cost_n - y @ self.A
            # absolute tolerance plus a term tracking the round-off in c - y A
            scale = np.abs(cost_n) if cost_n is not None else 0.0
            tol = cfg.dual_tol + cfg.dual_rel_tol * (scale + np.abs(y).max(initial=0.0) * self.colmax)
            nb = ~self.is_basic & ~self.fixed
            st = self.status
            cand_up = nb & (st != _AT_UB) & (d < -tol)
            cand_dn = nb & (st != _AT_LB) & (d > tol)
            # a variable at lb with finite ub can only increase, one at ub only decrease
            cand_up &= (st == _AT_LB) | (st == _FREE)
            cand_dn &= (st == _AT_UB) | (st == _FREE)
            cand = cand_up | cand_dn
            if not cand.any():
                if phase1:
                    return INFEASIBLE
                return OPTIMAL
            if bland:
                q = int(np.flatnonzero(cand)[0])
            else:
                score = np.where(cand, np.abs(d), -1.0)
                q = int(np.argmax(score))
            direction = 1.0 if cand_up[q] else -1.0

            alpha = self.Binv @ self.A[:, q]
            # basic values move by -direction * alpha * step
            rate = -direction * alpha
            step, leave, leave_to_ub = self._ratio(rate, phase1, bland)
            span = self.up[q] - self.lo[q]
            if span < step:
                # entering variable reaches its opposite bound first
                step = span
                leave = -1
            if not math.isfinite(step):
                if phase1:
                    raise NumericalBreakdownError("unbounded ray during phase one")
                return UNBOUNDED

            self.iterations += 1
            if step <= 1e-12:
                degenerate_run += 1
                if degenerate_run >= cfg.degenerate_limit:
                    bland = True
            else:
                degenerate_run = 0
                bland = False

            self.x[self.head] += rate * step
            if leave < 0:
                self.x[q] += direction * step
                self.status[q] = _AT_UB if direction > 0 else _AT_LB
                continue

            leaving = int(self.head[leave])
            self.x[q] += direction * step
            piv = alpha[leave]
            if abs(piv) < cfg.pivot_tol:
                attempts += 1
                if attempts > cfg.max_refactor_attempts:
                    raise NumericalBreakdownError("pivot element too small after refactorization")
                try:
                    self.refactor()
                except NumericalBreakdownError:
                    self.repair()
                continue
            # eta update of the explicit inverse
            prow = self.Binv[leave] / piv
            self.Binv -= np.outer(alpha, prow)
            self.Binv[leave] = prow
            self.head[leave] = q
            self.is_basic[q] = True
            self.is_basic[leaving] = False
            self.status[q] = _AT_LB
            if leave_to_ub:
                self.status[leaving] = _AT_UB
                self.x[leaving] = self.up[leaving]
            else:
                if math.isfinite(self.lo[leaving]):
                    self.status[leaving] = _AT_LB
                    self.x[leaving] = self.lo[leaving]
                else:
                    self.status[leaving] = _FREE
                    self.x[leaving] = 0.0
            self.since_refactor += 1
            if self.since_refactor >= cfg.refactor_every:
                try:
                    self.refactor()
                except NumericalBreakdownError:
                    attempts += 1
                    if attempts > cfg.max_refactor_attempts:
                        raise
                    self.repair()

    def _ratio(self, rate, phase1, bland):
        """Harris two-pass ratio test: (step, leaving position, leaves at upper bound).

        Pass one finds the longest step that keeps every basic within its bound
        relaxed by the primal tolerance; pass two picks, among rows blocking no
        later than that, the one with the largest pivot.
        """
        head = self.head
        xb = self.x[head]
        lo, up, tol = self.lo[head], self.up[head], self.ptol[head]
        dec = rate < -self.cfg.pivot_tol
        inc = rate > self.cfg.pivot_tol
        if phase1:
            below = xb < lo - tol
            above = xb > up + tol
            feas = ~below & ~above
            # feasible basics must stay feasible, infeasible ones stop where they regain feasibility
            m_lo = dec & feas & np.isfinite(lo)
            m_up = inc & feas & np.isfinite(up)
            m_up_in = dec & above
            m_lo_in = inc & below
        else:
            m_lo = dec & np.isfinite(lo)
            m_up = inc & np.isfinite(up)
            m_up_in = m_lo_in = np.zeros(head.size, dtype=bool)

        def steps(relax):
            st = np.full(head.size, np.inf)
            st[m_lo] = (xb[m_lo] - lo[m_lo] + relax[m_lo]) / -rate[m_lo]
            st[m_up] = (up[m_up] - xb[m_up] + relax[m_up]) / rate[m_up]
            st[m_up_in] = (xb[m_up_in] - up[m_up_in] + relax[m_up_in]) / -rate[m_up_in]
            st[m_lo_in] = (lo[m_lo_in] - xb[m_lo_in] + relax[m_lo_in]) / rate[m_lo_in]
            return np.maximum(st, 0.0)

        bound = steps(tol).min(initial=np.inf)
        if not math.isfinite(bound):
            return np.inf, -1, False
        exact = steps(np.zeros(head.size))
        ties = np.flatnonzero(exact <= bound)
        if bland:
            r = int(ties[np.argmin(head[ties])])
        else:
            r = int(ties[np.argmax(np.abs(rate[ties]))])
        return float(exact[r]), r, bool(m_up[r] or m_up_in[r])


def extend_basis(basis: Optional[Basis], n_old: int, m_old: int, n_new: int, m_new: int) -> Optional[Basis]:
    """Carry a basis over to a problem with columns and rows appended at the end.

    New columns start nonbasic at their lower bound, new rows get their
    logical variable basic.
    """
    if basis is None or basis.head.size != m_old or basis.status.size != n_old + m_old:
        return None
    dn = n_new - n_old
    head = np.where(basis.head < n_old, basis.head, basis.head + dn)
    head = np.concatenate([head, n_new + np.arange(m_old, m_new)])
    status = np.concatenate([basis.status[:n_old], np.full(dn, _AT_LB, dtype=np.int8),
                             basis.status[n_old:], np.full(m_new - m_old, _AT_LB, dtype=np.int8)])
    return Basis(head.astype(int), status)


def solve_lp(lp: LinearProgram, config: SolverConfig = DEFAULT_CONFIG,
             basis: Optional[Basis] = None) -> LpSolution:
    """Solve ``lp`` with the bounded primal simplex.

    ``basis`` may carry a previous final basis (same row/column layout) to
    warm start; any basis is accepted and repaired through phase one.
    """
    if lp.num_rows == 0:
        return _solve_box_only(lp)
    sx = _Simplex(lp, config)
    sx.install(basis)
    status = sx.run()
    if status != OPTIMAL:
        return LpSolution(status=status, iterations=sx.iterations)
    # clean up accumulated drift before reporting; re-run if it exposed infeasibility
    for _ in range(config.max_refactor_attempts + 1):
        try:
            sx.refactor()
        except NumericalBreakdownError:
            sx.repair()
        xb = sx.x[sx.head]
        viol = np.maximum(sx.lo[sx.head] - xb, xb - sx.up[sx.head])
        # round-off in B^-1 (b - N x_N) grows with the magnitude of the terms summed
        xn = sx.nonbasic_values()
        size = np.abs(sx.Binv) @ (np.abs(sx.b) + np.abs(sx.A) @ np.abs(xn))
        if not np.any(viol > 10 * sx.ptol[sx.head] + 1e-12 * size):
            break
        status = sx.run()
        if status != OPTIMAL:
            return LpSolution(status=status, iterations=sx.iterations)
    else:
        raise NumericalBreakdownError("basic solution does not settle after refactorization")
    n = sx.n
    x = sx.x[:n].copy()
    x = np.clip(x, lp.lb, lp.ub)
    cb = sx.cost[sx.head]
    y = np.linalg.solve(sx.A[:, sx.head].T, cb)
    red = lp.c - lp.G.T @ y
    basic = sx.head[sx.head < n]
    red[basic] = 0.0
    obj = float(lp.c @ x + lp.obj_const)
    return LpSolution(OPTIMAL, x, obj, y, red, sx.iterations,
                      Basis(sx.head.copy(), sx.status.copy()))


def _solve_box_only(lp: LinearProgram) -> LpSolution:
    x = np.where(lp.c > 0, lp.lb, np.where(lp.c < 0, lp.ub, np.where(np.isfinite(lp.lb), lp.lb,
                                                                      np.where(np.isfinite(lp.ub), lp.ub, 0.0))))
    if not np.all(np.isfinite(x)):
        return LpSolution(UNBOUNDED)
    return LpSolution(OPTIMAL, x, float(lp.c @ x + lp.obj_const), np.zeros(0), lp.c.copy())


# -- verification helpers -------------------------------------------------------

def primal_residual(lp: LinearProgram, x: np.ndarray) -> float:
    """Largest violation of rows and bounds at ``x``."""
    act = lp.G @ x - lp.g
    s = lp.senses
    v = np.zeros_like(act)
    v[s == LE] = np.maximum(act[s == LE], 0.0)
    v[s == GE] = np.maximum(-act[s == GE], 0.0)
    v[s == EQ] = np.abs(act[s == EQ])
    vb = np.maximum(np.maximum(lp.lb - x, x - lp.ub), 0.0)
    return float(max(v.max(initial=0.0), vb.max(initial=0.0)))


def dual_objective(lp: LinearProgram, sol: LpSolution) -> float:
    """Dual objective built from row duals and reduced costs at bounds."""
    d = sol.reduced_costs
    val = float(lp.g @ sol.duals) + lp.obj_const
    tiny = 1e-12 * (1.0 + np.abs(lp.c))
    pos = d > tiny
    neg = d < -tiny
    val += float(np.sum(d[pos] * lp.lb[pos])) if np.all(np.isfinite(lp.lb[pos])) else -np.inf
    val += float(np.sum(d[neg] * lp.ub[neg])) if np.all(np.isfinite(lp.ub[neg])) else -np.inf
    return val


def check_duals(lp: LinearProgram, sol: LpSolution, tol: float = 1e-7) -> float:
    """Largest sign / complementarity violation of the returned duals."""
    y, d, x = sol.duals, sol.reduced_costs, sol.x
    scale = 1.0 + np.abs(lp.c).max(initial=0.0)
    s = lp.senses
    worst = 0.0
    worst = max(worst, float(np.max(y[s == GE] * -1, initial=0.0)))
    worst = max(worst, float(np.max(y[s == LE], initial=0.0)))
    slack = lp.G @ x - lp.g
    worst = max(worst, float(np.max(np.abs(y * slack) * (s != EQ), initial=0.0)) / scale)
    at_lb = np.abs(x - lp.lb) <= 1e-7 * (1 + np.abs(lp.lb))
    at_ub = np.abs(x - lp.ub) <= 1e-7 * (1 + np.abs(lp.ub))
    inner = ~at_lb & ~at_ub
    worst = max(worst, float(np.max(np.abs(d[inner]), initial=0.0)) / scale)
    worst = max(worst, float(np.max(-d[at_lb & ~at_ub], initial=0.0)) / scale)
    worst = max(worst, float(np.max(d[at_ub & ~at_lb], initial=0.0)) / scale)
    return worst


# -- branch and bound -----------------------------------------------------------

@dataclass(order=True)
class _Node:
    bound: float
    node_id: int
    lb: np.ndarray = field(compare=False)
    ub: np.ndarray = field(compare=False)
    basis: Optional[Basis] = field(compare=False, default=None)


def solve_milp(mp: MixedProgram, config: SolverConfig = DEFAULT_CONFIG,
               incumbent: Optional[np.ndarray] = None) -> LpSolution:
    """Exact best-bound branch-and-bound over the binary index set.

    ``incumbent`` optionally gives starting values for the binaries; it is
    evaluated first and used for pruning.
    """
    lp = mp.lp
    bins = mp.binaries
    itol = config.integrality_tol
    best: Optional[LpSolution] = None
    best_val = math.inf
    total_iter = 0

    def evaluate_fixed(vals):
        nonlocal best, best_val, total_iter
        sub = lp.copy()
        sub.lb[bins] = vals
        sub.ub[bins] = vals
        sol = solve_lp(sub, config)
        total_iter += sol.iterations
        if sol.optimal and sol.objective < best_val:
            best, best_val = sol, sol.objective
        return sol

    if incumbent is not None and bins.size:
        vals = np.round(np.asarray(incumbent, dtype=float))
        if np.all((vals >= lp.lb[bins]) & (vals <= lp.ub[bins])):
            evaluate_fixed(vals)

    counter = 0
    root = solve_lp(lp, config)
    total_iter += root.iterations
    if root.status == UNBOUNDED:
        return LpSolution(UNBOUNDED, iterations=total_iter)
    if not root.optimal:
        if best is not None:
            return _finish(best, total_iter, 1)
        return LpSolution(INFEASIBLE, iterations=total_iter, nodes=1)
    heap = [(_Node(root.objective, counter, lp.lb.copy(), lp.ub.copy(), root.basis), root)]
    nodes = 0
    while heap:
        node, sol = heapq.heappop(heap)
        if sol is None:
            sub = lp.copy()
            sub.lb, sub.ub = node.lb, node.ub
            sol = solve_lp(sub, config, basis=node.basis)
            total_iter += sol.iterations
            nodes += 1
            if not sol.optimal:
                continue
        else:
            nodes += 1
        if nodes > config.node_limit:
            raise NodeLimitError(
                f"node limit {config.node_limit} exceeded", best_bound=node.bound,
                incumbent=best_val)
        if sol.objective >= best_val - config.prune_tol:
            continue
        vals = sol.x[bins]
        frac = np.abs(vals - np.round(vals))
        if frac.size == 0 or frac.max() <= itol:
            best, best_val = sol, sol.objective
            continue
        # most fractional variable, lowest index on ties
        k = int(np.argmax(np.round(frac, 12)))
        j = int(bins[k])
        for side in (0.0, 1.0):
            lbn, ubn = node.lb.copy(), node.ub.copy()
            lbn[j] = ubn[j] = side
            counter += 1
            sub = lp.copy()
            sub.lb, sub.ub = lbn, ubn
            child = solve_lp(sub, config, basis=sol.basis)
            total_iter += child.iterations
            if not child.optimal or child.objective >= best_val - config.prune_tol:
                continue
            heapq.heappush(heap, (_Node(child.objective, counter, lbn, ubn, child.basis), child))
    if best is None:
        return LpSolution(INFEASIBLE, iterations=total_iter, nodes=nodes)
    # polish: round binaries and re-solve the continuous part
    vals = np.round(best.x[bins])
    sub = lp.copy()
    sub.lb[bins] = vals
    sub.ub[bins] = vals
    final = solve_lp(sub, config, basis=best.basis)
    if final.optimal:
        final.x[bins] = vals
        best = final
    return _finish(best, total_iter, nodes)


def _finish(sol: LpSolution, iters: int, nodes: int) -> LpSolution:
    sol.iterations = iters
    sol.nodes = nodes
    return sol


# -- LP file export ---------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.12g}"


def write_lp_file(lp: LinearProgram, path, binaries: Sequence[int] = ()) -> None:
    """Dump ``lp`` in CPLEX LP text format for external cross-checking."""
    names = lp.var_names or [f"v{j}" for j in range(lp.num_vars)]
    names = [_safe(nm) for nm in names]
    rnames = [_safe(r) for r in (lp.row_names or [f"r{i}" for i in range(lp.num_rows)])]

    def expr(coefs):
        parts = []
        for j in np.flatnonzero(coefs):
            v = coefs[j]
            parts.append(f"{'-' if v < 0 else '+'} {_fmt(abs(v))} {names[j]}")
        return " ".join(parts) if parts else "0 " + names[0]

    op = {LE: "<=", EQ: "=", GE: ">="}
    lines = ["\\ written by radpuc", "Minimize", f" obj: {expr(lp.c)}"]
    if lp.obj_const:
        lines[-1] += f" + {_fmt(lp.obj_const)} constant"
    lines.append("Subject To")
    for i in range(lp.num_rows):
        lines.append(f" {rnames[i]}: {expr(lp.G[i])} {op[lp.senses[i]]} {_fmt(lp.g[i])}")
    lines.append("Bounds")
    if lp.obj_const:
        lines.append(" constant = 1")
    for j in range(lp.num_vars):
        lo, hi = lp.lb[j], lp.ub[j]
        los = "-inf" if np.isneginf(lo) else _fmt(lo)
        his = "+inf" if np.isposinf(hi) else _fmt(hi)
        lines.append(f" {los} <= {names[j]} <= {his}")
    if len(binaries):
        lines.append("Binaries")
        lines.append(" " + " ".join(names[j] for j in binaries))
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _safe(name: str) -> str:
    out = "".join(ch if ch.isalnum() or ch in "_.[]" else "_" for ch in str(name))
    return out if out and not out[0].isdigit() else "x" + out


# -- incremental model builder ------------------------------------------------------------

class LpBuilder:
    """Accumulates named variable blocks and sparse rows, then emits a LinearProgram."""

    def __init__(self):
        self._lb, self._ub, self._c, self._names = [], [], [], []
        self.binaries: list = []
        self._rows: list = []
        self.senses: list = []
        self.rhs: list = []
        self.row_names: list = []
        self.obj_const = 0.0

    @property
    def num_vars(self):
        return len(self._c)

    @property
    def num_rows(self):
        return len(self.rhs)

    def add_vars(self, name, shape, lb=0.0, ub=np.inf, cost=0.0, binary=False) -> np.ndarray:
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        start = len(self._c)
        self._lb += list(np.broadcast_to(np.asarray(lb, float), shape).ravel()) if n else []
        self._ub += list(np.broadcast_to(np.asarray(ub, float), shape).ravel()) if n else []
        self._c += list(np.broadcast_to(np.asarray(cost, float), shape).ravel()) if n else []
        for k in np.ndindex(*shape):
            self._names.append(f"{name}[{','.join(map(str, k))}]" if k else name)
        idx = np.arange(start, start + n).reshape(shape)
        if binary:
            self.binaries += idx.ravel().tolist()
        return idx

    def add_row(self, idx, coef, sense, rhs, name=None) -> int:
        idx = np.atleast_1d(np.asarray(idx, dtype=int)).ravel()
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape).ravel()
        self._rows.append((idx, coef))
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name or f"r{len(self.rhs) - 1}")
        return len(self.rhs) - 1

    def set_cost(self, idx, cost):
        for j, v in zip(np.atleast_1d(idx).ravel(), np.broadcast_to(cost, np.shape(np.atleast_1d(idx))).ravel()):
            self._c[int(j)] = float(v)

    def build(self) -> LinearProgram:
        n = self.num_vars
        G = np.zeros((self.num_rows, n))
        for i, (idx, coef) in enumerate(self._rows):
            np.add.at(G[i], idx, coef)
        return LinearProgram(np.array(self._c), G, self.senses, np.array(self.rhs), np.array(self._lb),
                             np.array(self._ub), self.obj_const, list(self._names), list(self.row_names))

    def build_mixed(self) -> MixedProgram:
        return MixedProgram(self.build(), np.array(self.binaries, dtype=int))
