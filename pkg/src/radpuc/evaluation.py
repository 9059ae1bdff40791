"""Vertex scenario-tree oracle and Monte-Carlo sequential dispatch simulation."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InternalConsistencyError, ResourceError
from .lower import Cut, CutPool, LowerSolver, new_cut_pools
from .lpsolve import LinearProgram, SolverConfig, DEFAULT_CONFIG, solve_lp
from .model import CommitmentSchedule, SystemCase, UncertaintySet, compile_stages, initial_state
from .ucstage import RobustEnvelope, envelope_forms
from .worstcase import budget_vertices, vertex_count

ORACLE_PATH_CAP = 4096


class VertexTree:
    """Per-stage vertex lists and the full path enumeration below one root."""

    def __init__(self, uset: UncertaintySet, cap: int = ORACLE_PATH_CAP):
        self.uset = uset
        count = 1
        for t in range(1, uset.T + 1):
            # the count is checked before any enumeration
            count *= vertex_count(uset, t)
            if count > cap:
                raise ResourceError(f"vertex tree has more than {cap} paths")
        self.vertices = [budget_vertices(uset, t) for t in range(1, uset.T + 1)]
        self.path_count = count

    def paths(self):
        for combo in itertools.product(*[range(len(v)) for v in self.vertices]):
            yield np.array([self.vertices[t][k] for t, k in enumerate(combo)])


@dataclass
class OracleResult:
    value: float
    root_values: list
    worst_root: np.ndarray
    path_count: int


def tree_lp(forms, vertices, root: np.ndarray, y0: np.ndarray) -> LinearProgram:
    """Nonanticipative extensive LP over the vertex tree rooted at ``root``.

    Node n at stage t carries the dispatch y_n and an epigraph variable
    theta_n >= b.y_c + theta_c for each child c.  The optimum is the
    min-max cost over all paths that start with ``root``.
    """
    T = len(forms)
    nodes = [(0, root, -1)]          # (stage index, scenario, parent node)
    frontier = [0]
    for t in range(1, T):
        nxt = []
        for p in frontier:
            for v in vertices[t]:
                nodes.append((t, v, p))
                nxt.append(len(nodes) - 1)
        frontier = nxt
    ncol = forms[0].num_cols
    nn = len(nodes)
    nvar = nn * (ncol + 1)
    rows = []
    rhs = []
    senses = []

    def ycol(n):
        return n * (ncol + 1)

    def th(n):
        return n * (ncol + 1) + ncol

    nrows = sum(forms[t].num_rows for t, _, _ in nodes) + (nn - 1)
    G = np.zeros((nrows, nvar))
    g = np.zeros(nrows)
    r = 0
    for n, (t, xi, p) in enumerate(nodes):
        f = forms[t]
        m = f.num_rows
        G[r:r + m, ycol(n):ycol(n) + ncol] = f.B
        if p < 0:
            g[r:r + m] = f.rhs(y0, xi)
        else:
            g[r:r + m] = f.h + f.H @ xi
            G[r:r + m, ycol(p) + f.state_cols] = f.A
        senses += list(f.senses)
        r += m
    for n, (t, xi, p) in enumerate(nodes):
        if p >= 0:
            # theta_p - b.y_n - theta_n >= 0
            G[r, th(p)] = 1.0
            G[r, ycol(n):ycol(n) + ncol] = -forms[t].b
            G[r, th(n)] = -1.0
            senses.append("G")
            r += 1
    c = np.zeros(nvar)
    c[ycol(0):ycol(0) + ncol] = forms[0].b
    c[th(0)] = 1.0
    lb = np.zeros(nvar)
    ub = np.full(nvar, np.inf)
    for n, (t, _, _) in enumerate(nodes):
        lb[ycol(n):ycol(n) + ncol] = forms[t].lb
        ub[ycol(n):ycol(n) + ncol] = forms[t].ub
        if t == T - 1:
            ub[th(n)] = 0.0
    return LinearProgram(c, G, np.array(senses), g, lb, ub)


def oracle_worst_case(case: SystemCase, x: CommitmentSchedule, uset: UncertaintySet, cap: int = ORACLE_PATH_CAP,
                      config: SolverConfig = DEFAULT_CONFIG, forms=None) -> OracleResult:
    """Exact worst-case dispatch cost from y0 for a fixed commitment (excludes startup cost)."""
    tree = VertexTree(uset, cap)
    forms = compile_stages(case, uset, x) if forms is None else forms
    y0 = initial_state(case)
    vals = []
    for root in tree.vertices[0]:
        sol = solve_lp(tree_lp(forms, tree.vertices, root, y0), config)
        if not sol.optimal:
            raise InternalConsistencyError(f"oracle tree LP is {sol.status}")
        vals.append(sol.objective)
    k = int(np.argmax(vals))
    return OracleResult(float(vals[k]), vals, np.array(tree.vertices[0][k]), tree.path_count)


# -- simulation -------------------------------------------------------------------

@dataclass
class SimulationRun:
    seed: int
    mode: str
    paths: np.ndarray          # (P, T, Nr)
    costs: np.ndarray          # fuel plus startup per path
    slack_counts: np.ndarray   # stages with any slack activation per path
    slack_mw: np.ndarray
    balance_residual: float
    dispatch: list             # per path (T, N) states

    @property
    def mean(self) -> float:
        return float(math.fsum(self.costs) / len(self.costs))

    @property
    def max(self) -> float:
        return float(np.max(self.costs))

    @property
    def violations(self) -> int:
        return int(np.sum(self.slack_counts))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "path", "cost", "slack_count"])
            for j, (c, s) in enumerate(zip(self.costs, self.slack_counts)):
                w.writerow([self.seed, j, f"{c:.12g}", int(s)])
            w.writerow(["summary", len(self.costs), f"{self.mean:.12g}", self.violations])
            w.writerow(["max", len(self.costs), f"{self.max:.12g}", ""])


def sample_paths(uset: UncertaintySet, count: int, seed: int) -> np.ndarray:
    """Uniform samples over the box, independent per stage and renewable."""
    rng = np.random.default_rng(seed)
    out = np.empty((count, uset.T, uset.nr))
    for j in range(count):
        for t in range(uset.T):
            while True:
                xi = rng.uniform(uset.lower[t], uset.upper[t])
                if uset.contains(t + 1, xi):
                    break
            out[j, t] = xi
    return out


def simulate_policy(case: SystemCase, uset: UncertaintySet, mode: str, x: CommitmentSchedule,
                    cuts: Optional[dict] = None, envelope: Optional[RobustEnvelope] = None,
                    paths: int = 200, seed: int = 0, samples: Optional[np.ndarray] = None,
                    config: SolverConfig = DEFAULT_CONFIG) -> SimulationRun:
    """Stage-by-stage dispatch along sampled paths.

    mode radp/rddp solves each stage against the converged cuts; mode rfr
    solves the myopic stage problem inside the robust envelope.
    """
    T = case.T
    forms = compile_stages(case, uset, x)
    N = forms[0].N
    if mode == "rfr":
        if envelope is None:
            raise ValueError("rfr simulation needs the robust envelope")
        forms = envelope_forms(forms, envelope)
        pools = {t: CutPool(t, N, zero=True) for t in range(1, T + 2)}
    else:
        if cuts is None:
            raise ValueError(f"{mode} simulation needs cut pools")
        pools = cuts
    if samples is None:
        samples = sample_paths(uset, paths, seed)
    solver = LowerSolver(forms, config)
    cm = forms[0].cols
    sc = forms[0].state_cols
    P, SC, SD = cm.block("p"), cm.block("sc"), cm.block("sd")
    slack = cm.slack_cols
    fuel = np.array([g.cost for g in case.generators]) * case.t_delta
    startup = x.startup_cost(case)
    demand = case.demand()
    y0 = initial_state(case)
    costs, counts, mw, traj = [], [], [], []
    resid = 0.0
    for path in samples:
        y = y0
        cost = startup
        n_slack = 0
        s_mw = 0.0
        states = []
        for t in range(1, T + 1):
            xi = path[t - 1]
            res = solver.solve(t, y, xi, pools[t + 1])
            z = res.y
            cost += float(fuel @ z[P])
            s = float(z[slack].sum())
            if s > 1e-7:
                n_slack += 1
                s_mw += s
            bal = z[P].sum() + z[SD].sum() - z[SC].sum() + z[cm.block("shed")].sum() - z[cm.block("spill")].sum()
            resid = max(resid, abs(bal - (demand[t - 1] - xi.sum())))
            y = z[sc]
            states.append(y.copy())
        costs.append(cost)
        counts.append(n_slack)
        mw.append(s_mw)
        traj.append(np.array(states))
    return SimulationRun(seed, mode, samples, np.array(costs), np.array(counts), np.array(mw), resid, traj)


def simulate_report(case: SystemCase, uset: UncertaintySet, report, paths: int = 200, seed: int = 0,
                    samples=None, config: SolverConfig = DEFAULT_CONFIG) -> SimulationRun:
    return simulate_policy(case, uset, report.mode, report.x, report.cuts, report.envelope, paths, seed, samples,
                           config)


def cut_pools_from_snapshot(snapshot: dict, T: int, N: int) -> dict:
    pools = new_cut_pools(T, N)
    for key, cuts in snapshot.items():
        t = int(key)
        for c in cuts:
            pools[t].add(Cut(t, np.asarray(c["anchor"], dtype=float), np.asarray(c["scenario"], dtype=float),
                             float(c["value"]), np.asarray(c["coeffs"], dtype=float), int(c["iteration"])))
    return pools
