"""RADP outer/inner iterations and the RDDP and RFR baselines."""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import RunConfig
from .lower import CutPool, LowerSolver, new_cut_pools
from .lpsolve import SolverConfig, DEFAULT_CONFIG
from .model import (CommitmentSchedule, SystemCase, UncertaintySet, build_uncertainty_set, compile_stages,
                    initial_state, state_bounds)
from .ucstage import MasterResult, RobustEnvelope, UCMaster, envelope_forms
from .upper import CandidatePool, UpperSolver, combination_value, init_candidates, new_candidate_pools
from .worstcase import WorstCaseGenerator

FIXED_POINT = "commitment-fixed-point"
MAX_ITER = "max-iterations"
CONVERGED = "gap-converged"


@dataclass
class IterationTrace:
    outer: int
    inner: int
    lower: float
    upper: float
    gap: float
    scenarios: list          # backward-pass scenario per stage
    seconds: float

    def row(self):
        return [self.outer, self.inner, self.lower, self.upper, self.gap, self.seconds]


@dataclass
class InnerResult:
    cuts: dict
    candidates: dict
    lower: float
    upper: float
    path: np.ndarray         # (T, Nr) backward-pass scenarios of the last iteration
    converged: bool
    iterations: int
    traces: list


@dataclass
class SolveReport:
    mode: str
    x: CommitmentSchedule
    envelope: Optional[RobustEnvelope]
    cuts: dict
    candidates: dict
    traces: list
    reason: str
    config: dict
    lower: float             # F_1(y0) lower estimate (dispatch only)
    upper: float
    startup_cost: float
    master_objective: float
    outer_iterations: int
    paths: list
    seconds: float = 0.0
    schedules: dict = field(default_factory=dict)   # outer iteration -> commitment of its inner loop

    @property
    def objective(self) -> float:
        """Commitment cost plus the converged worst-case dispatch estimate."""
        if self.mode == "rfr":
            return self.master_objective
        return self.startup_cost + self.lower

    @property
    def capped(self) -> bool:
        return self.reason == MAX_ITER

    def to_dict(self, timings: bool = True) -> dict:
        d = {
            "mode": self.mode,
            "termination": self.reason,
            "objective": self.objective,
            "lower": self.lower,
            "upper": self.upper,
            "startup_cost": self.startup_cost,
            "master_objective": self.master_objective,
            "outer_iterations": self.outer_iterations,
            "commitment": self.x.to_dict(),
            "envelope": None if self.envelope is None else self.envelope.to_dict(),
            "scenario_paths": [np.asarray(p).tolist() for p in self.paths],
            "cut_counts": {str(t): len(p) for t, p in self.cuts.items()},
            "candidate_counts": {str(t): len(p) for t, p in self.candidates.items()},
            "config": self.config,
        }
        if timings:
            d["seconds"] = self.seconds
        return d


def relative_gap(lower: float, upper: float) -> float:
    return (upper - lower) / max(abs(lower), 1.0)


def _worst(gen: WorstCaseGenerator, method: str, t, y_prev, pool):
    if method == "mccormick":
        return gen.mccormick(t, y_prev, pool)
    return gen.exact(t, y_prev, pool, method)


def run_inner(case: SystemCase, uset: UncertaintySet, x: CommitmentSchedule, method: str,
              epsilon: float = 1e-6, max_inner: int = 200, outer: int = 0,
              solver: SolverConfig = DEFAULT_CONFIG, clock: Optional[float] = None) -> InnerResult:
    """Forward/backward passes for a fixed commitment until the bounds meet at y0."""
    T = case.T
    forms = compile_stages(case, uset, x)
    N = forms[0].N
    sc = forms[0].state_cols
    cuts = new_cut_pools(T, N)
    cands = new_candidate_pools(case, uset)
    lower = LowerSolver(forms, solver)
    upper = UpperSolver(forms, solver)
    gen = WorstCaseGenerator(forms, uset, solver)
    y0 = initial_state(case)
    clock = time.perf_counter() if clock is None else clock
    traces = []
    lb = ub = np.nan
    path = np.tile(uset.nominal[:, :], (1, 1))
    converged = False
    m2 = 0
    for m2 in range(1, max_inner + 1):
        ys = [y0]
        for t in range(1, T + 1):
            wc = _worst(gen, method, t, ys[-1], cands[t + 1])
            res = lower.solve(t, ys[-1], wc.scenario, cuts[t + 1])
            ys.append(res.y[sc])
        path = np.zeros((T, uset.nr))
        for t in range(T, 0, -1):
            yp = ys[t - 1]
            wc = _worst(gen, method, t, yp, cands[t + 1])
            up = upper.solve(t, yp, wc.scenario, cands[t + 1])
            cands[t].update(yp, up.value, f"{outer}:{m2}")
            res = lower.solve(t, yp, wc.scenario, cuts[t + 1], make_cut=True, iteration=m2)
            cuts[t].add(res.cut)
            path[t - 1] = wc.scenario
        lb = cuts[1].value(y0)
        ub = combination_value(cands[1], y0, solver)
        gap = relative_gap(lb, ub)
        traces.append(IterationTrace(outer, m2, lb, ub, gap, path.tolist(), time.perf_counter() - clock))
        if gap <= epsilon:
            converged = True
            break
    return InnerResult(cuts, cands, lb, ub, path, converged, m2, traces)


def run_rddp_inner(case: SystemCase, x: CommitmentSchedule, uset: UncertaintySet, config: RunConfig = RunConfig(mode="rddp"),
                   solver: SolverConfig = DEFAULT_CONFIG) -> InnerResult:
    method = config.method if config.method != "mccormick" else "vertex"
    return run_inner(case, uset, x, method, config.epsilon, config.max_inner, 0, solver)


def _prepare(case, uset, config):
    if config.penalty_factor != case.penalty_factor:
        case = dataclasses.replace(case, penalty_factor=config.penalty_factor)
    if uset is None:
        uset = build_uncertainty_set(case, config.scale, config.budget)
    return case, uset


def run_radp(case: SystemCase, uset: Optional[UncertaintySet] = None, config: RunConfig = RunConfig(),
             solver: SolverConfig = DEFAULT_CONFIG) -> SolveReport:
    """Outer master / inner approximation loop.  ``config.mode`` = rddp swaps in the exact worst case."""
    case, uset = _prepare(case, uset, config)
    clock = time.perf_counter()
    master = UCMaster(case, uset, solver)
    master.append_path(uset.nominal)
    method = config.method
    x_prev = None
    inner = None
    mres = None
    traces = []
    schedules = {}
    reason = MAX_ITER
    capped = False
    m1 = 0
    for m1 in range(1, config.max_outer + 1):
        mres = master.solve(warm=x_prev)
        if x_prev is not None and mres.x == x_prev:
            reason = FIXED_POINT
            break
        schedules[m1] = mres.x
        inner = run_inner(case, uset, mres.x, method, config.epsilon, config.max_inner, m1, solver, clock)
        traces += inner.traces
        if not inner.converged:
            capped = True
            break
        master.append_path(inner.path)
        x_prev = mres.x
    if capped:
        reason = MAX_ITER
    if inner is None:
        raise RuntimeError("no inner loop was run")
    return SolveReport(config.mode, x_prev if reason == FIXED_POINT else mres.x, mres.envelope, inner.cuts,
                       inner.candidates, traces, reason, config.to_dict(), inner.lower, inner.upper,
                       mres.x.startup_cost(case), mres.objective, m1, list(master.paths.paths),
                       time.perf_counter() - clock, schedules)


def rfr_worst_path(case: SystemCase, uset: UncertaintySet, x: CommitmentSchedule, envelope: RobustEnvelope,
                   method: str = "vertex", solver: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Stage-wise greedy worst path against the myopic envelope-bounded dispatch."""
    forms = envelope_forms(compile_stages(case, uset, x), envelope)
    N = forms[0].N
    lo, hi = state_bounds(case)
    zero = init_candidates(N, hi, lo, 0.0)
    gen = WorstCaseGenerator(forms, uset, solver)
    lower = LowerSolver(forms, solver)
    none = CutPool(case.T + 1, N, zero=True)
    y = initial_state(case)
    path = np.zeros((case.T, uset.nr))
    for t in range(1, case.T + 1):
        wc = gen.exact(t, y, zero, method)
        path[t - 1] = wc.scenario
        y = lower.solve(t, y, wc.scenario, none).y[forms[0].state_cols]
    return path


def run_rfr(case: SystemCase, uset: Optional[UncertaintySet] = None, config: RunConfig = RunConfig(mode="rfr"),
            solver: SolverConfig = DEFAULT_CONFIG) -> SolveReport:
    """Column-and-constraint generation on the master alone.

    Stops once the greedy worst path against the current envelope is
    already in the scenario set, so the next master would repeat x.
    """
    case, uset = _prepare(case, uset, config)
    clock = time.perf_counter()
    method = config.method if config.method != "mccormick" else "vertex"
    master = UCMaster(case, uset, solver)
    master.append_path(uset.nominal)
    x_prev = None
    mres = None
    reason = MAX_ITER
    traces = []
    m1 = 0
    for m1 in range(1, config.max_outer + 1):
        mres = master.solve(warm=x_prev)
        path = rfr_worst_path(case, uset, mres.x, mres.envelope, method, solver)
        traces.append(IterationTrace(m1, 0, mres.objective, mres.objective, 0.0, path.tolist(),
                                     time.perf_counter() - clock))
        # a repeated path leaves the master, hence x, unchanged
        if not master.append_path(path):
            reason = FIXED_POINT
            break
        x_prev = mres.x
    dispatch = mres.phi0
    return SolveReport("rfr", mres.x, mres.envelope, {}, {}, traces, reason, config.to_dict(), dispatch, dispatch,
                       mres.x.startup_cost(case), mres.objective, m1, list(master.paths.paths),
                       time.perf_counter() - clock)


def run(case: SystemCase, config: RunConfig, uset: Optional[UncertaintySet] = None,
        solver: SolverConfig = DEFAULT_CONFIG) -> SolveReport:
    if config.mode == "rfr":
        return run_rfr(case, uset, config, solver)
    return run_radp(case, uset, config, solver)


def write_trace_csv(traces, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["outer", "inner", "lower", "upper", "gap", "seconds"])
        for tr in traces:
            w.writerow([tr.outer, tr.inner, f"{tr.lower:.12g}", f"{tr.upper:.12g}", f"{tr.gap:.12g}",
                        f"{tr.seconds:.6f}"])
