"""Commitment-stage master problem with robust dispatch envelopes.

The master picks binaries, startup indicators and per-stage dispatch
envelopes [min, max] that are nonanticipative by construction: any dispatch
sequence inside the envelopes respects ramping and storage dynamics.  Every
scenario path in the set carries its own recourse block bounded by the
envelopes, and phi0 upper-bounds each path's dispatch cost.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InternalConsistencyError, RadpucError
from .lpsolve import LpBuilder, SolverConfig, DEFAULT_CONFIG, solve_milp, write_lp_file
from .model import CommitmentSchedule, SystemCase, UncertaintySet, compute_shift_factors


@dataclass
class RobustEnvelope:
    pg_min: np.ndarray   # (T, Ng)
    pg_max: np.ndarray
    e_min: np.ndarray    # (T, Ns)
    e_max: np.ndarray
    sc_min: np.ndarray
    sc_max: np.ndarray
    sd_min: np.ndarray
    sd_max: np.ndarray

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(v, dtype=float) for k, v in d.items()})


class ScenarioSet:
    """Full-horizon scenario paths, arrays shaped (T, Nr), deduplicated at 1e-9."""

    def __init__(self, uset: UncertaintySet):
        self.uset = uset
        self.paths: list = []
        self._keys: set = set()

    def __len__(self):
        return len(self.paths)

    def add(self, path) -> bool:
        path = np.asarray(path, dtype=float).reshape(self.uset.T, self.uset.nr)
        for t in range(1, self.uset.T + 1):
            if not self.uset.contains(t, path[t - 1]):
                raise ValueError(f"path leaves the uncertainty set at stage {t}")
        key = tuple(np.round(path, 9).ravel().tolist())
        if key in self._keys:
            return False
        self._keys.add(key)
        self.paths.append(path.copy())
        return True


@dataclass
class MasterResult:
    x: CommitmentSchedule
    envelope: RobustEnvelope
    phi0: float
    objective: float
    startup_cost: float
    dispatch: list           # per path: dict of arrays
    nodes: int


class UCMaster:
    def __init__(self, case: SystemCase, uset: UncertaintySet, config: SolverConfig = DEFAULT_CONFIG):
        self.case = case
        self.uset = uset
        self.config = config
        self.paths = ScenarioSet(uset)
        self.ptdf = compute_shift_factors(case)
        self._last = None

    def append_path(self, path) -> bool:
        return self.paths.add(path)

    def recourse_columns_per_stage(self) -> int:
        c = self.case
        return c.ng + 3 * c.ns + 2 + 2 * c.nl + (c.ns if any(s.e_terminal_min is not None for s in c.storages) else 0)

    def build(self):
        case = self.case
        T, ng, ns, nl = case.T, case.ng, case.ns, case.nl
        td, pen = case.t_delta, case.penalty()
        gens, stos = case.generators, case.storages
        b = LpBuilder()
        v = {}
        v["xg"] = b.add_vars("xg", (T, ng), 0, 1, binary=True)
        v["xs"] = b.add_vars("xs", (T, ns), 0, 1, binary=True)
        v["u"] = b.add_vars("u", (T, ng), 0, 1, cost=np.tile([g.startup_cost for g in gens], (T, 1)))
        v["phi0"] = b.add_vars("phi0", (), 0, np.inf, cost=1.0)
        pmax = np.array([g.p_max for g in gens])
        v["pg_min"] = b.add_vars("pg_min", (T, ng), 0, np.tile(pmax, (T, 1)))
        v["pg_max"] = b.add_vars("pg_max", (T, ng), 0, np.tile(pmax, (T, 1)))
        scb = np.tile([s.p_charge_max for s in stos], (T, 1)).reshape(T, ns)
        sdb = np.tile([s.p_discharge_max for s in stos], (T, 1)).reshape(T, ns)
        elo = np.tile([s.e_min for s in stos], (T, 1)).reshape(T, ns)
        ehi = np.tile([s.e_max for s in stos], (T, 1)).reshape(T, ns)
        for k, bound in (("sc", scb), ("sd", sdb)):
            v[f"{k}_min"] = b.add_vars(f"{k}_min", (T, ns), 0, bound)
            v[f"{k}_max"] = b.add_vars(f"{k}_max", (T, ns), 0, bound)
        v["e_min"] = b.add_vars("e_min", (T, ns), elo, ehi)
        v["e_max"] = b.add_vars("e_max", (T, ns), elo, ehi)
        xg, xs, u = v["xg"], v["xs"], v["u"]
        x0 = np.array([g.initial_status for g in gens])
        p0 = np.array([g.initial_output for g in gens])
        e0 = np.array([s.e_initial for s in stos])

        # startup and minimum up/down logic
        for i, g in enumerate(gens):
            for t in range(T):
                if t == 0:
                    b.add_row([u[t, i], xg[t, i]], [1, -1], "G", -x0[i], f"startup[{g.id},{t + 1}]")
                else:
                    b.add_row([u[t, i], xg[t, i], xg[t - 1, i]], [1, -1, 1], "G", 0, f"startup[{g.id},{t + 1}]")
                for tau in range(t + 1, min(T, t + g.min_up)):
                    # x_tau >= x_t - x_{t-1}
                    if t == 0:
                        b.add_row([xg[tau, i], xg[t, i]], [1, -1], "G", -x0[i], f"minup[{g.id},{t + 1},{tau + 1}]")
                    else:
                        b.add_row([xg[tau, i], xg[t, i], xg[t - 1, i]], [1, -1, 1], "G", 0,
                                  f"minup[{g.id},{t + 1},{tau + 1}]")
                for tau in range(t + 1, min(T, t + g.min_down)):
                    # 1 - x_tau >= x_{t-1} - x_t
                    if t == 0:
                        b.add_row([xg[tau, i], xg[t, i]], [-1, 1], "G", x0[i] - 1, f"mindn[{g.id},{t + 1},{tau + 1}]")
                    else:
                        b.add_row([xg[tau, i], xg[t, i], xg[t - 1, i]], [-1, 1, -1], "G", -1,
                                  f"mindn[{g.id},{t + 1},{tau + 1}]")

        # envelope ramping
        pmn, pmx = v["pg_min"], v["pg_max"]
        for i, g in enumerate(gens):
            a_u = g.ramp_up * td - g.startup_ramp
            a_d = g.ramp_down * td - g.shutdown_ramp
            for t in range(T):
                if t == 0:
                    b.add_row([pmx[t, i], xg[t, i]], [-1, g.startup_ramp - g.p_max], "G",
                              -g.p_max - p0[i] - a_u * x0[i], f"env_rup[{g.id},1]")
                    b.add_row([pmn[t, i], xg[t, i]], [1, a_d], "G",
                              -g.p_max + p0[i] - (g.shutdown_ramp - g.p_max) * x0[i], f"env_rdn[{g.id},1]")
                else:
                    b.add_row([pmx[t, i], pmn[t - 1, i], xg[t - 1, i], xg[t, i]],
                              [-1, 1, a_u, g.startup_ramp - g.p_max], "G", -g.p_max, f"env_rup[{g.id},{t + 1}]")
                    b.add_row([pmx[t - 1, i], pmn[t, i], xg[t, i], xg[t - 1, i]],
                              [-1, 1, a_d, g.shutdown_ramp - g.p_max], "G", -g.p_max, f"env_rdn[{g.id},{t + 1}]")
                b.add_row([pmn[t, i], xg[t, i]], [1, -g.p_min], "G", 0, f"env_pmin[{g.id},{t + 1}]")
                b.add_row([pmx[t, i], pmn[t, i]], [1, -1], "G", 0, f"env_order[{g.id},{t + 1}]")
                b.add_row([xg[t, i], pmx[t, i]], [g.p_max, -1], "G", 0, f"env_pmax[{g.id},{t + 1}]")

        # envelope storage
        scn, scx, sdn, sdx = v["sc_min"], v["sc_max"], v["sd_min"], v["sd_max"]
        emn, emx = v["e_min"], v["e_max"]
        for k, s in enumerate(stos):
            ac, ad = s.eff_charge * td, td / s.eff_discharge
            for t in range(T):
                b.add_row([scx[t, k], scn[t, k]], [1, -1], "G", 0, f"env_sc_order[{s.id},{t + 1}]")
                b.add_row([xs[t, k], scx[t, k]], [s.p_charge_max, -1], "G", 0, f"env_sc_max[{s.id},{t + 1}]")
                b.add_row([sdx[t, k], sdn[t, k]], [1, -1], "G", 0, f"env_sd_order[{s.id},{t + 1}]")
                b.add_row([xs[t, k], sdx[t, k]], [-s.p_discharge_max, -1], "G", -s.p_discharge_max,
                          f"env_sd_max[{s.id},{t + 1}]")
                if t == 0:
                    b.add_row([emn[t, k], scn[t, k], sdx[t, k]], [1, -ac, ad], "E", e0[k], f"env_emin[{s.id},1]")
                    b.add_row([emx[t, k], scx[t, k], sdn[t, k]], [1, -ac, ad], "E", e0[k], f"env_emax[{s.id},1]")
                else:
                    b.add_row([emn[t, k], emn[t - 1, k], scn[t, k], sdx[t, k]], [1, -1, -ac, ad], "E", 0,
                              f"env_emin[{s.id},{t + 1}]")
                    b.add_row([emx[t, k], emx[t - 1, k], scx[t, k], sdn[t, k]], [1, -1, -ac, ad], "E", 0,
                              f"env_emax[{s.id},{t + 1}]")
                b.add_row([emx[t, k], emn[t, k]], [1, -1], "G", 0, f"env_e_order[{s.id},{t + 1}]")

        blocks = [self._add_path(b, v, j, path) for j, path in enumerate(self.paths.paths)]
        return b, v, blocks

    def _add_path(self, b: LpBuilder, v, j, path):
        case = self.case
        T, ng, ns, nl = case.T, case.ng, case.ns, case.nl
        td, pen = case.t_delta, case.penalty()
        gens, stos = case.generators, case.storages
        idx = case.bus_index()
        ptdf = self.ptdf
        pmax = np.array([g.p_max for g in gens])
        blk = {
            "p": b.add_vars(f"p{j}", (T, ng), 0, np.tile(pmax, (T, 1))),
            "sc": b.add_vars(f"sc{j}", (T, ns), 0, np.tile([s.p_charge_max for s in stos], (T, 1)).reshape(T, ns)),
            "sd": b.add_vars(f"sd{j}", (T, ns), 0, np.tile([s.p_discharge_max for s in stos], (T, 1)).reshape(T, ns)),
            "E": b.add_vars(f"E{j}", (T, ns), np.tile([s.e_min for s in stos], (T, 1)).reshape(T, ns),
                            np.tile([s.e_max for s in stos], (T, 1)).reshape(T, ns)),
            "shed": b.add_vars(f"shed{j}", (T,), 0),
            "spill": b.add_vars(f"spill{j}", (T,), 0),
            "relief_up": b.add_vars(f"relief_up{j}", (T, nl), 0),
            "relief_dn": b.add_vars(f"relief_dn{j}", (T, nl), 0),
        }
        terminal = [k for k, s in enumerate(stos) if s.e_terminal_min is not None]
        if terminal:
            blk["term"] = b.add_vars(f"term{j}", (len(terminal),), 0)
        p, sc, sd, E = blk["p"], blk["sc"], blk["sd"], blk["E"]
        xg = v["xg"]
        x0 = np.array([g.initial_status for g in gens])
        p0 = np.array([g.initial_output for g in gens])
        e0 = np.array([s.e_initial for s in stos])
        demand = case.demand()
        for t in range(T):
            for i, g in enumerate(gens):
                b.add_row([p[t, i], v["pg_min"][t, i]], [1, -1], "G", 0)
                b.add_row([v["pg_max"][t, i], p[t, i]], [1, -1], "G", 0)
                a_u = g.ramp_up * td - g.startup_ramp
                a_d = g.ramp_down * td - g.shutdown_ramp
                if t == 0:
                    b.add_row([p[t, i], xg[t, i]], [-1, g.startup_ramp - g.p_max], "G",
                              -g.p_max - p0[i] - a_u * x0[i])
                    b.add_row([p[t, i], xg[t, i]], [1, a_d], "G",
                              -g.p_max + p0[i] - (g.shutdown_ramp - g.p_max) * x0[i])
                else:
                    b.add_row([p[t, i], p[t - 1, i], xg[t - 1, i], xg[t, i]], [-1, 1, a_u, g.startup_ramp - g.p_max],
                              "G", -g.p_max)
                    b.add_row([p[t - 1, i], p[t, i], xg[t, i], xg[t - 1, i]], [-1, 1, a_d, g.shutdown_ramp - g.p_max],
                              "G", -g.p_max)
            for k, s in enumerate(stos):
                for name in ("sc", "sd"):
                    b.add_row([blk[name][t, k], v[f"{name}_min"][t, k]], [1, -1], "G", 0)
                    b.add_row([v[f"{name}_max"][t, k], blk[name][t, k]], [1, -1], "G", 0)
                b.add_row([E[t, k], v["e_min"][t, k]], [1, -1], "G", 0)
                b.add_row([v["e_max"][t, k], E[t, k]], [1, -1], "G", 0)
                ac, ad = s.eff_charge * td, td / s.eff_discharge
                if t == 0:
                    b.add_row([E[t, k], sc[t, k], sd[t, k]], [1, -ac, ad], "E", e0[k])
                else:
                    b.add_row([E[t, k], E[t - 1, k], sc[t, k], sd[t, k]], [1, -1, -ac, ad], "E", 0)
            xi = path[t]
            b.add_row(np.concatenate([p[t], sd[t], sc[t], [blk["shed"][t], blk["spill"][t]]]),
                      np.concatenate([np.ones(ng), np.ones(ns), -np.ones(ns), [1, -1]]), "E",
                      demand[t] - xi.sum(), f"balance[{j},{t + 1}]")
            for l, line in enumerate(case.lines):
                gf = np.array([ptdf[l, idx[g.bus]] for g in gens])
                sf = np.array([ptdf[l, idx[s.bus]] for s in stos])
                rf = np.array([ptdf[l, idx[r.bus]] for r in case.renewables])
                df = sum(ptdf[l, idx[d.bus]] * d.demand[t] for d in case.loads)
                flow_idx = np.concatenate([p[t], sd[t], sc[t]])
                flow_cf = np.concatenate([gf, sf, -sf])
                b.add_row(np.append(flow_idx, blk["relief_up"][t, l]), np.append(-flow_cf, 1.0), "G",
                          -line.flow_limit - df + rf @ xi, f"flow_up[{j},{line.id},{t + 1}]")
                b.add_row(np.append(flow_idx, blk["relief_dn"][t, l]), np.append(flow_cf, 1.0), "G",
                          -line.flow_limit + df - rf @ xi, f"flow_dn[{j},{line.id},{t + 1}]")
        for n, k in enumerate(terminal):
            b.add_row([E[T - 1, k], blk["term"][n]], [1, 1], "G", stos[k].e_terminal_min)
        # phi0 >= dispatch cost of this path
        cost_idx = [v["phi0"]]
        cost_cf = [1.0]
        fuel = np.array([g.cost * td for g in gens])
        cost_idx.append(p.ravel())
        cost_cf.append(-np.tile(fuel, T))
        for name in ("shed", "spill", "relief_up", "relief_dn", "term"):
            if name in blk:
                cost_idx.append(blk[name].ravel())
                cost_cf.append(np.full(blk[name].size, -pen * td))
        b.add_row(np.concatenate([np.atleast_1d(a) for a in cost_idx]),
                  np.concatenate([np.atleast_1d(a) for a in cost_cf]), "G", 0, f"phi0[{j}]")
        return blk

    def solve(self, warm: Optional[CommitmentSchedule] = None) -> MasterResult:
        if len(self.paths) == 0:
            raise RadpucError("the scenario set must contain at least one path")
        b, v, blocks = self.build()
        mp = b.build_mixed()
        inc = None
        if warm is not None:
            inc = np.concatenate([warm.gen.ravel(), warm.sto.ravel()]).astype(float)
        sol = solve_milp(mp, self.config, incumbent=inc)
        if not sol.optimal:
            raise InternalConsistencyError(f"UC-stage master is {sol.status}")
        z = sol.x
        case = self.case
        x = CommitmentSchedule(z[v["xg"]], z[v["xs"]].reshape(case.T, case.ns))
        env = RobustEnvelope(*(z[v[k]].reshape(case.T, -1) if v[k].size else np.zeros((case.T, 0))
                               for k in ("pg_min", "pg_max", "e_min", "e_max", "sc_min", "sc_max", "sd_min", "sd_max")))
        env = _clean(env, mp.lp, v)
        dispatch = [{k: z[a] for k, a in blk.items()} for blk in blocks]
        res = MasterResult(x, env, float(z[v["phi0"]]), sol.objective, x.startup_cost(case), dispatch, sol.nodes)
        self._last = (b, mp)
        return res

    def dump_lp(self, path) -> None:
        b, v, _ = self.build()
        mp = b.build_mixed()
        write_lp_file(mp.lp, path, mp.binaries)


def _clean(env: RobustEnvelope, lp, v) -> RobustEnvelope:
    """Clip round-off: values into their variable bounds and min <= max."""
    out = {}
    for k in RobustEnvelope.__dataclass_fields__:
        idx = v[k]
        val = getattr(env, k)
        if idx.size:
            val = np.clip(val, lp.lb[idx].reshape(val.shape), lp.ub[idx].reshape(val.shape))
        out[k] = val
    for a in ("pg", "e", "sc", "sd"):
        out[f"{a}_min"] = np.minimum(out[f"{a}_min"], out[f"{a}_max"])
    return RobustEnvelope(**out)


def solve_master(case, uset, paths, warm=None, config: SolverConfig = DEFAULT_CONFIG) -> MasterResult:
    m = UCMaster(case, uset, config)
    for p in paths:
        m.append_path(p)
    return m.solve(warm)


def envelope_forms(forms, env: RobustEnvelope) -> list:
    """Stage forms with dispatch boxes tightened to the robust envelope."""
    out = []
    for f in forms:
        t = f.t - 1
        lb, ub = f.lb.copy(), f.ub.copy()
        cm = f.cols
        for name, lo, hi in (("p", env.pg_min, env.pg_max), ("sc", env.sc_min, env.sc_max),
                             ("sd", env.sd_min, env.sd_max), ("E", env.e_min, env.e_max)):
            blk = cm.block(name)
            lo_t, hi_t = lo[t], hi[t]
            lb[blk] = np.maximum(lb[blk], np.minimum(lo_t, hi_t))
            ub[blk] = np.minimum(ub[blk], np.maximum(lo_t, hi_t))
            ub[blk] = np.maximum(ub[blk], lb[blk])
        out.append(dataclasses.replace(f, lb=lb, ub=ub))
    return out
