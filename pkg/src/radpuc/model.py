"""Power-system case, uncertainty set, DC shift factors and stage compilation.

Each dispatch stage t is compiled into the form::

    A_t y_{t-1} + B_t y_t  (>= or =)  h_t(x) + H_t xi_t,   y_t in Y_t

with ``h_t(x) = h0_t + Hx_t @ x.flat``.  Rows are either ``>=`` or native
equalities.  Every stage carries nonnegative penalized slacks so that any
previous state and any scenario admit a feasible dispatch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import CaseError, StructuralError

PENALTY_FACTOR = 1e4


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    cost: float
    startup_cost: float
    p_min: float
    p_max: float
    ramp_up: float
    ramp_down: float
    startup_ramp: float
    shutdown_ramp: float
    min_up: int
    min_down: int
    initial_status: int
    initial_output: float


@dataclass(frozen=True)
class Storage:
    id: str
    bus: str
    e_min: float
    e_max: float
    p_charge_max: float
    p_discharge_max: float
    eff_charge: float
    eff_discharge: float
    e_initial: float
    e_terminal_min: Optional[float] = None


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    susceptance: float
    flow_limit: float


@dataclass(frozen=True)
class Load:
    bus: str
    demand: tuple


@dataclass(frozen=True)
class Renewable:
    id: str
    bus: str
    nominal: tuple
    deviation: tuple


@dataclass(frozen=True)
class SystemCase:
    buses: tuple
    lines: tuple
    generators: tuple
    storages: tuple
    loads: tuple
    renewables: tuple
    T: int
    t_delta: float
    ref_bus: str
    penalty_factor: float = PENALTY_FACTOR

    @property
    def ng(self):
        return len(self.generators)

    @property
    def ns(self):
        return len(self.storages)

    @property
    def nl(self):
        return len(self.lines)

    @property
    def nr(self):
        return len(self.renewables)

    def bus_index(self):
        return {b: i for i, b in enumerate(self.buses)}

    def demand(self) -> np.ndarray:
        """Total demand per stage (MW)."""
        d = np.zeros(self.T)
        for ld in self.loads:
            d += np.asarray(ld.demand, dtype=float)
        return d

    def penalty(self) -> float:
        """Slack penalty Pi per MW (per MWh once multiplied by t_delta)."""
        cmax = max((g.cost for g in self.generators), default=0.0)
        return self.penalty_factor * max(cmax, 1.0)


def state_dimension(case: SystemCase) -> int:
    return case.ng + case.ns


# -- loading --------------------------------------------------------------------

def case_schema() -> dict:
    with resources.files("radpuc").joinpath("case_schema.json").open() as fh:
        return json.load(fh)


def load_case(path) -> SystemCase:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CaseError(f"cannot read case file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return case_from_dict(data, source=str(path))


def case_from_dict(data: dict, source: str = "<case>") -> SystemCase:
    import jsonschema

    try:
        jsonschema.validate(data, case_schema())
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CaseError(f"{source}: field {loc}: {exc.message}") from exc

    hz = data["horizon"]
    T = int(hz["T"])
    case = SystemCase(
        buses=tuple(str(b) for b in data["buses"]),
        lines=tuple(Line(str(l["id"]), str(l["from_bus"]), str(l["to_bus"]), float(l["susceptance"]),
                         float(l["flow_limit"])) for l in data["lines"]),
        generators=tuple(Generator(
            str(g["id"]), str(g["bus"]), float(g["cost"]), float(g["startup_cost"]), float(g["p_min"]),
            float(g["p_max"]), float(g["ramp_up"]), float(g["ramp_down"]), float(g["startup_ramp"]),
            float(g["shutdown_ramp"]), int(g["min_up"]), int(g["min_down"]), int(g["initial_status"]),
            float(g["initial_output"])) for g in data["generators"]),
        storages=tuple(Storage(
            str(s["id"]), str(s["bus"]), float(s["e_min"]), float(s["e_max"]), float(s["p_charge_max"]),
            float(s["p_discharge_max"]), float(s["eff_charge"]), float(s["eff_discharge"]), float(s["e_initial"]),
            None if s.get("e_terminal_min") is None else float(s["e_terminal_min"]))
            for s in data.get("storages", [])),
        loads=tuple(Load(str(d["bus"]), tuple(float(v) for v in d["demand"])) for d in data.get("loads", [])),
        renewables=tuple(Renewable(str(r["id"]), str(r["bus"]), tuple(float(v) for v in r["nominal"]),
                                   tuple(float(v) for v in r["deviation"])) for r in data.get("renewables", [])),
        T=T, t_delta=float(hz["t_delta_hours"]), ref_bus=str(hz["ref_bus"]),
    )
    validate_case(case, source)
    return case


def case_to_dict(case: SystemCase) -> dict:
    def gen(g):
        return {k: getattr(g, k) for k in Generator.__dataclass_fields__}

    def sto(s):
        d = {k: getattr(s, k) for k in Storage.__dataclass_fields__}
        if d["e_terminal_min"] is None:
            del d["e_terminal_min"]
        return d

    return {
        "buses": list(case.buses),
        "lines": [{k: getattr(l, k) for k in Line.__dataclass_fields__} for l in case.lines],
        "generators": [gen(g) for g in case.generators],
        "storages": [sto(s) for s in case.storages],
        "loads": [{"bus": d.bus, "demand": list(d.demand)} for d in case.loads],
        "renewables": [{"id": r.id, "bus": r.bus, "nominal": list(r.nominal), "deviation": list(r.deviation)}
                       for r in case.renewables],
        "horizon": {"T": case.T, "t_delta_hours": case.t_delta, "ref_bus": case.ref_bus},
    }


def validate_case(case: SystemCase, source: str = "<case>") -> None:
    def fail(msg):
        raise CaseError(f"{source}: {msg}")

    if case.T < 1:
        fail("horizon T must be >= 1")
    if not case.t_delta > 0:
        fail("t_delta_hours must be > 0")
    buses = set(case.buses)
    if len(buses) != len(case.buses):
        fail("duplicate bus ids")
    if case.ref_bus not in buses:
        fail(f"reference bus {case.ref_bus} does not exist")
    for kind, items in (("generator", case.generators), ("storage", case.storages),
                        ("renewable", case.renewables), ("line", case.lines)):
        ids = [it.id for it in items]
        if len(set(ids)) != len(ids):
            fail(f"duplicate {kind} ids")
    for g in case.generators:
        if g.bus not in buses:
            fail(f"generator {g.id}: bus {g.bus} does not exist")
        if not 0 <= g.p_min <= g.p_max:
            fail(f"generator {g.id}: requires 0 <= p_min <= p_max")
        if g.ramp_up < 0 or g.ramp_down < 0:
            fail(f"generator {g.id}: ramp rates must be nonnegative")
        if g.startup_ramp < g.p_min or g.shutdown_ramp < g.p_min:
            fail(f"generator {g.id}: startup/shutdown ramp must be >= p_min")
        if g.min_up < 1 or g.min_down < 1:
            fail(f"generator {g.id}: min up/down times must be >= 1")
        if g.initial_status not in (0, 1):
            fail(f"generator {g.id}: initial_status must be 0 or 1")
        lo = g.p_min if g.initial_status else 0.0
        hi = g.p_max if g.initial_status else 0.0
        if not lo - 1e-9 <= g.initial_output <= hi + 1e-9:
            fail(f"generator {g.id}: initial_output inconsistent with initial status and limits")
        if g.cost < 0 or g.startup_cost < 0:
            fail(f"generator {g.id}: costs must be nonnegative")
    for s in case.storages:
        if s.bus not in buses:
            fail(f"storage {s.id}: bus {s.bus} does not exist")
        if not 0 <= s.e_min <= s.e_initial <= s.e_max:
            fail(f"storage {s.id}: requires 0 <= e_min <= e_initial <= e_max")
        if not (s.p_charge_max > 0 and s.p_discharge_max > 0):
            fail(f"storage {s.id}: power limits must be positive")
        if not (0 < s.eff_charge <= 1 and 0 < s.eff_discharge <= 1):
            fail(f"storage {s.id}: efficiencies must lie in (0, 1]")
        if s.e_terminal_min is not None and not s.e_min <= s.e_terminal_min <= s.e_max:
            fail(f"storage {s.id}: e_terminal_min outside energy limits")
    for l in case.lines:
        if l.from_bus not in buses or l.to_bus not in buses:
            fail(f"line {l.id}: unknown endpoint bus")
        if l.from_bus == l.to_bus:
            fail(f"line {l.id}: self loop")
        if not (l.susceptance > 0 and l.flow_limit > 0):
            fail(f"line {l.id}: susceptance and flow limit must be positive")
    for d in case.loads:
        if d.bus not in buses:
            fail(f"load at bus {d.bus}: bus does not exist")
        if len(d.demand) != case.T or min(d.demand) < 0:
            fail(f"load at bus {d.bus}: demand must have T nonnegative entries")
    for r in case.renewables:
        if r.bus not in buses:
            fail(f"renewable {r.id}: bus {r.bus} does not exist")
        if len(r.nominal) != case.T or len(r.deviation) != case.T:
            fail(f"renewable {r.id}: nominal/deviation must have T entries")
        if min(r.deviation) < 0 or min(r.nominal) < 0:
            fail(f"renewable {r.id}: nominal and deviation must be nonnegative")
    if len(case.buses) > 1 and _components(case) > 1:
        fail("network graph is not connected")


def _components(case: SystemCase) -> int:
    idx = case.bus_index()
    nb = len(case.buses)
    if not case.lines:
        return nb
    i = [idx[l.from_bus] for l in case.lines]
    j = [idx[l.to_bus] for l in case.lines]
    adj = sp.coo_matrix((np.ones(len(i)), (i, j)), shape=(nb, nb))
    return connected_components(adj, directed=False)[0]


# -- uncertainty ------------------------------------------------------------------

@dataclass(frozen=True)
class UncertaintySet:
    """Per-stage box over renewable outputs, arrays shaped (T, Nr)."""

    lower: np.ndarray
    upper: np.ndarray
    nominal: np.ndarray
    budget: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.lower.shape != self.upper.shape or self.lower.shape != self.nominal.shape:
            raise CaseError("uncertainty bound arrays must share shape (T, Nr)")
        if np.any(self.lower > self.nominal + 1e-12) or np.any(self.nominal > self.upper + 1e-12):
            raise CaseError("uncertainty set requires lower <= nominal <= upper")
        if self.budget is not None:
            nr = self.lower.shape[1]
            if self.budget.shape != (self.lower.shape[0],) or np.any(self.budget < 0) or np.any(self.budget > nr):
                raise CaseError("budget must be a length-T vector within [0, Nr]")

    @property
    def T(self):
        return self.lower.shape[0]

    @property
    def nr(self):
        return self.lower.shape[1]

    def width(self):
        return self.upper - self.lower

    def contains(self, t: int, xi: np.ndarray, tol: float = 1e-9) -> bool:
        """Membership of ``xi`` in the stage-t set (t is 1-based)."""
        lo, hi = self.lower[t - 1], self.upper[t - 1]
        if np.any(xi < lo - tol) or np.any(xi > hi + tol):
            return False
        if self.budget is not None:
            return self.budget_usage(t, xi) <= self.budget[t - 1] + tol
        return True

    def budget_usage(self, t: int, xi: np.ndarray) -> float:
        nom = self.nominal[t - 1]
        half = np.where(xi >= nom, self.upper[t - 1] - nom, nom - self.lower[t - 1])
        dev = np.abs(xi - nom)
        ratio = np.divide(dev, half, out=np.zeros_like(dev), where=half > 0)
        return float(ratio.sum())

    def stage_vertices(self, t: int) -> np.ndarray:
        """Vertices of the stage-t set, one per row, in a fixed order."""
        from .worstcase import budget_vertices

        return budget_vertices(self, t)


def build_uncertainty_set(case: SystemCase, scale: float = 1.0, budget=None) -> UncertaintySet:
    """Box ``nominal -/+ scale * deviation`` clipped at zero, with optional budget."""
    T, nr = case.T, case.nr
    nom = np.zeros((T, nr))
    dev = np.zeros((T, nr))
    for r, ren in enumerate(case.renewables):
        nom[:, r] = ren.nominal
        dev[:, r] = ren.deviation
    lower = np.maximum(0.0, nom - scale * dev)
    upper = nom + scale * dev
    bud = None
    if budget is not None:
        bud = np.broadcast_to(np.asarray(budget, dtype=float), (T,)).copy()
    return UncertaintySet(lower, upper, nom, bud)


# -- shift factors -----------------------------------------------------------------

def compute_shift_factors(case: SystemCase) -> np.ndarray:
    """PTDF matrix (lines x buses); the reference-bus column is zero."""
    nb, nl = len(case.buses), case.nl
    idx = case.bus_index()
    if nl == 0:
        if nb > 1:
            raise StructuralError("network with several buses and no lines is disconnected")
        return np.zeros((0, nb))
    C = np.zeros((nl, nb))
    b = np.array([l.susceptance for l in case.lines])
    for k, l in enumerate(case.lines):
        C[k, idx[l.from_bus]] = 1.0
        C[k, idx[l.to_bus]] = -1.0
    Bbus = C.T @ (b[:, None] * C)
    ref = idx[case.ref_bus]
    keep = np.array([i for i in range(nb) if i != ref], dtype=int)
    Bred = Bbus[np.ix_(keep, keep)]
    if keep.size and np.linalg.matrix_rank(Bred) < keep.size:
        raise StructuralError("singular reduced susceptance matrix (network is disconnected)")
    ptdf = np.zeros((nl, nb))
    if keep.size:
        X = np.linalg.inv(Bred)
        ptdf[:, keep] = (b[:, None] * C[:, keep]) @ X
    return ptdf


def dc_flows(case: SystemCase, injections: np.ndarray) -> np.ndarray:
    """Line flows for a balanced nodal injection vector by solving the DC equations."""
    nb = len(case.buses)
    idx = case.bus_index()
    C = np.zeros((case.nl, nb))
    b = np.array([l.susceptance for l in case.lines])
    for k, l in enumerate(case.lines):
        C[k, idx[l.from_bus]] = 1.0
        C[k, idx[l.to_bus]] = -1.0
    Bbus = C.T @ (b[:, None] * C)
    ref = idx[case.ref_bus]
    keep = [i for i in range(nb) if i != ref]
    theta = np.zeros(nb)
    theta[keep] = np.linalg.solve(Bbus[np.ix_(keep, keep)], injections[keep])
    return b * (C @ theta)


# -- commitment -----------------------------------------------------------------------

@dataclass(frozen=True)
class CommitmentSchedule:
    """Binary schedules, arrays shaped (T, Ng) and (T, Ns); storage 1 = charging mode."""

    gen: np.ndarray
    sto: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gen", np.asarray(np.round(self.gen), dtype=int))
        object.__setattr__(self, "sto", np.asarray(np.round(self.sto), dtype=int))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.gen.ravel(), self.sto.ravel()]).astype(float)

    def key(self):
        return (self.gen.tobytes(), self.sto.tobytes())

    def __eq__(self, other):
        return (isinstance(other, CommitmentSchedule) and np.array_equal(self.gen, other.gen)
                and np.array_equal(self.sto, other.sto))

    def __hash__(self):
        return hash(self.key())

    def startups(self, case: SystemCase) -> np.ndarray:
        prev = np.array([g.initial_status for g in case.generators], dtype=int)
        full = np.vstack([prev[None, :], self.gen])
        return np.maximum(0, np.diff(full, axis=0))

    def startup_cost(self, case: SystemCase) -> float:
        cup = np.array([g.startup_cost for g in case.generators])
        return float((self.startups(case) * cup).sum())

    def to_dict(self):
        return {"generators": self.gen.tolist(), "storages": self.sto.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["generators"], dtype=float).reshape(len(d["generators"]), -1),
                   np.asarray(d["storages"], dtype=float).reshape(len(d["storages"]), -1))


def all_on(case: SystemCase) -> CommitmentSchedule:
    return CommitmentSchedule(np.ones((case.T, case.ng)), np.zeros((case.T, case.ns)))


def check_commitment_logic(case: SystemCase, x: CommitmentSchedule) -> list:
    """Return human-readable violations of min up/down time logic (empty if none).

    Units are assumed to have been in their initial status long enough.
    """
    out = []
    T = case.T
    for i, g in enumerate(case.generators):
        seq = np.concatenate([[g.initial_status], x.gen[:, i]])
        for t in range(1, T + 1):
            if seq[t] == 1 and seq[t - 1] == 0:
                end = min(T, t + g.min_up - 1)
                if np.any(seq[t:end + 1] == 0):
                    out.append(f"{g.id}: min up violated after startup at stage {t}")
            if seq[t] == 0 and seq[t - 1] == 1:
                end = min(T, t + g.min_down - 1)
                if np.any(seq[t:end + 1] == 1):
                    out.append(f"{g.id}: min down violated after shutdown at stage {t}")
    return out


# -- stage forms --------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnMap:
    """Column blocks of a stage variable vector."""

    ng: int
    ns: int
    nl: int

    def _start(self, name):
        order = ["p", "sc", "sd", "E", "shed", "spill", "ramp_up", "ramp_dn",
                 "e_pos", "e_neg", "relief_up", "relief_dn", "term"]
        sizes = self.sizes()
        s = 0
        for k in order:
            if k == name:
                return s
            s += sizes[k]
        raise KeyError(name)

    def sizes(self):
        ng, ns, nl = self.ng, self.ns, self.nl
        return {"p": ng, "sc": ns, "sd": ns, "E": ns, "shed": 1, "spill": 1, "ramp_up": ng, "ramp_dn": ng,
                "e_pos": ns, "e_neg": ns, "relief_up": nl, "relief_dn": nl, "term": ns}

    def block(self, name) -> slice:
        s = self._start(name)
        return slice(s, s + self.sizes()[name])

    @property
    def num_cols(self):
        return sum(self.sizes().values())

    @property
    def state_cols(self) -> np.ndarray:
        p, E = self.block("p"), self.block("E")
        return np.concatenate([np.arange(p.start, p.stop), np.arange(E.start, E.stop)])

    @property
    def slack_cols(self) -> np.ndarray:
        return np.arange(self.block("shed").start, self.num_cols)


@dataclass(frozen=True)
class StageForm:
    t: int
    A: np.ndarray            # rows x N, acts on the previous state
    B: np.ndarray            # rows x cols
    H: np.ndarray            # rows x Nr
    b: np.ndarray            # stage cost per column
    h0: np.ndarray
    Hx: sp.csr_matrix        # rows x len(x.flat())
    h: np.ndarray            # h0 + Hx @ x for the compiled schedule
    senses: np.ndarray       # 'G' or 'E' per row
    lb: np.ndarray
    ub: np.ndarray
    cols: ColumnMap
    row_names: tuple
    row_kinds: tuple         # physical origin per row

    @property
    def num_rows(self):
        return self.B.shape[0]

    @property
    def num_cols(self):
        return self.B.shape[1]

    @property
    def state_cols(self):
        return self.cols.state_cols

    @property
    def N(self):
        return self.A.shape[1]

    def rhs(self, y_prev: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Right-hand side of ``B y >= h + H xi - A y_prev``."""
        return self.h + self.H @ xi - self.A @ y_prev

    def var_names(self):
        names = []
        for k, n in self.cols.sizes().items():
            names += [f"{k}{i}_t{self.t}" for i in range(n)]
        return names


def initial_state(case: SystemCase) -> np.ndarray:
    return np.array([g.initial_output for g in case.generators] + [s.e_initial for s in case.storages], dtype=float)


def state_bounds(case: SystemCase):
    """Box of the state vector (generator outputs, storage energies)."""
    lo = np.array([0.0] * case.ng + [s.e_min for s in case.storages])
    hi = np.array([g.p_max for g in case.generators] + [s.e_max for s in case.storages])
    return lo, hi


def stage_cost_bound(case: SystemCase, uset: UncertaintySet, t: int) -> float:
    """A-priori bound on a stage cost reachable from any in-box previous state.

    Uses the dispatch that sits at minimum output, idles storage and absorbs
    everything else in slacks; ``t`` is 1-based.
    """
    pen = case.penalty()
    td = case.t_delta
    cmax = max((g.cost for g in case.generators), default=0.0)
    psum = sum(g.p_max for g in case.generators)
    ssum = sum(s.p_charge_max + s.p_discharge_max for s in case.storages)
    inj = case.demand()[t - 1] + psum + ssum + float(np.abs(uset.upper[t - 1]).sum())
    coupling = sum(g.p_max + g.startup_ramp + g.shutdown_ramp for g in case.generators)
    terminal = sum(s.e_max for s in case.storages if s.e_terminal_min is not None) if t == case.T else 0.0
    return td * (cmax * psum + pen * ((1 + case.nl) * inj + coupling + terminal))


def sentinel_value(case: SystemCase, uset: UncertaintySet, t: int) -> float:
    """Valid upper value of the worst-case cost-to-go from stage ``t`` onward,
    for any previous state on the initialization simplex.  Zero past the horizon."""
    if t > case.T:
        return 0.0
    lo, hi = state_bounds(case)
    beta = float(hi.sum())
    tail = sum(stage_cost_bound(case, uset, s) for s in range(t, case.T + 1))
    # extra coupling slack for previous states outside the physical box
    return tail + 2.0 * case.penalty() * case.t_delta * (beta + float(np.abs(lo).sum()))


def compile_stages(case: SystemCase, uset: UncertaintySet, x: CommitmentSchedule) -> list:
    """Compile every dispatch stage for commitment ``x``; returns StageForm list t = 1..T."""
    if x.gen.shape != (case.T, case.ng) or x.sto.shape != (case.T, case.ns):
        raise CaseError("commitment schedule dimensions do not match the case")
    if uset.T != case.T or uset.nr != case.nr:
        raise CaseError("uncertainty set dimensions do not match the case")
    ptdf = compute_shift_factors(case)
    return [_compile_stage(case, x, ptdf, t) for t in range(1, case.T + 1)]


# public short name; ``compile`` shadows a builtin so it is an alias only
compile = compile_stages


def _xindex(case, t, kind, i):
    """Position of x^g_{i,t} or x_{s,t} inside ``CommitmentSchedule.flat``; t is 1-based."""
    if kind == "g":
        return (t - 1) * case.ng + i
    return case.T * case.ng + (t - 1) * case.ns + i


def _compile_stage(case: SystemCase, x: CommitmentSchedule, ptdf: np.ndarray, t: int) -> StageForm:
    ng, ns, nl, nr = case.ng, case.ns, case.nl, case.nr
    T, td = case.T, case.t_delta
    cm = ColumnMap(ng, ns, nl)
    ncol = cm.num_cols
    N = ng + ns
    nx = T * (ng + ns)
    idx = case.bus_index()
    pen = case.penalty()
    terminal = [k for k, s in enumerate(case.storages) if s.e_terminal_min is not None] if t == T else []

    rows_B, rows_A, rows_H, h0, senses, names, kinds = [], [], [], [], [], [], []
    hx = []  # (row, xcol, coef)

    def add(bvec, avec, hvec, rhs, sense, name, kind):
        rows_B.append(bvec)
        rows_A.append(avec)
        rows_H.append(hvec)
        h0.append(rhs)
        senses.append(sense)
        names.append(name)
        kinds.append(kind)
        return len(h0) - 1

    P, SC, SD, E = cm.block("p"), cm.block("sc"), cm.block("sd"), cm.block("E")
    zA, zH = np.zeros(N), np.zeros(nr)

    # ramping, written as >= rows; x_{t-1} for t = 1 is the initial status
    for i, g in enumerate(case.generators):
        bvec = np.zeros(ncol)
        avec = np.zeros(N)
        bvec[P.start + i] = -1.0
        bvec[cm.block("ramp_up").start + i] = 1.0
        avec[i] = 1.0
        r = add(bvec, avec, zH, -g.p_max, "G", f"ramp_up[{g.id},{t}]", "ramp_up")
        # -(ramp_up*td*x_{t-1} + su*(x_t - x_{t-1}) + pmax*(1 - x_t))
        _hx_prev(hx, case, r, t, i, -(g.ramp_up * td - g.startup_ramp), h0)
        hx.append((r, _xindex(case, t, "g", i), -(g.startup_ramp - g.p_max)))
    for i, g in enumerate(case.generators):
        bvec = np.zeros(ncol)
        avec = np.zeros(N)
        bvec[P.start + i] = 1.0
        bvec[cm.block("ramp_dn").start + i] = 1.0
        avec[i] = -1.0
        r = add(bvec, avec, zH, -g.p_max, "G", f"ramp_dn[{g.id},{t}]", "ramp_dn")
        # -(ramp_dn*td*x_t + sd*(x_{t-1} - x_t) + pmax*(1 - x_{t-1}))
        hx.append((r, _xindex(case, t, "g", i), -(g.ramp_down * td - g.shutdown_ramp)))
        _hx_prev(hx, case, r, t, i, -(g.shutdown_ramp - g.p_max), h0)

    # storage energy balance
    for k, s in enumerate(case.storages):
        bvec = np.zeros(ncol)
        avec = np.zeros(N)
        bvec[E.start + k] = 1.0
        bvec[SC.start + k] = -s.eff_charge * td
        bvec[SD.start + k] = td / s.eff_discharge
        bvec[cm.block("e_pos").start + k] = 1.0
        bvec[cm.block("e_neg").start + k] = -1.0
        avec[ng + k] = -1.0
        add(bvec, avec, zH, 0.0, "E", f"energy[{s.id},{t}]", "energy")

    # line flows: injection shift factors
    gcol = np.array([ptdf[:, idx[g.bus]] for g in case.generators]).T.reshape(nl, ng)
    scol = np.array([ptdf[:, idx[s.bus]] for s in case.storages]).T.reshape(nl, ns)
    rcol = np.array([ptdf[:, idx[r.bus]] for r in case.renewables]).T.reshape(nl, nr)
    dflow = np.zeros(nl)
    for ld in case.loads:
        dflow += ptdf[:, idx[ld.bus]] * ld.demand[t - 1]
    for l, line in enumerate(case.lines):
        # upper limit: -(flow) + relief >= -limit
        bvec = np.zeros(ncol)
        bvec[P] = -gcol[l]
        bvec[SD] = -scol[l]
        bvec[SC] = scol[l]
        bvec[cm.block("relief_up").start + l] = 1.0
        add(bvec, zA.copy(), rcol[l].copy(), -line.flow_limit - dflow[l], "G", f"flow_up[{line.id},{t}]", "flow_up")
    for l, line in enumerate(case.lines):
        bvec = np.zeros(ncol)
        bvec[P] = gcol[l]
        bvec[SD] = scol[l]
        bvec[SC] = -scol[l]
        bvec[cm.block("relief_dn").start + l] = 1.0
        add(bvec, zA.copy(), -rcol[l], -line.flow_limit + dflow[l], "G", f"flow_dn[{line.id},{t}]", "flow_dn")

    # power balance
    bvec = np.zeros(ncol)
    bvec[P] = 1.0
    bvec[SD] = 1.0
    bvec[SC] = -1.0
    bvec[cm.block("shed").start] = 1.0
    bvec[cm.block("spill").start] = -1.0
    add(bvec, zA.copy(), -np.ones(nr), float(case.demand()[t - 1]), "E", f"balance[{t}]", "balance")

    # commitment-dependent bounds
    for i, g in enumerate(case.generators):
        bvec = np.zeros(ncol)
        bvec[P.start + i] = 1.0
        r = add(bvec, zA.copy(), zH, 0.0, "G", f"p_min[{g.id},{t}]", "p_min")
        hx.append((r, _xindex(case, t, "g", i), g.p_min))
    for i, g in enumerate(case.generators):
        bvec = np.zeros(ncol)
        bvec[P.start + i] = -1.0
        r = add(bvec, zA.copy(), zH, 0.0, "G", f"p_max[{g.id},{t}]", "p_max")
        hx.append((r, _xindex(case, t, "g", i), -g.p_max))
    for k, s in enumerate(case.storages):
        bvec = np.zeros(ncol)
        bvec[SC.start + k] = -1.0
        r = add(bvec, zA.copy(), zH, 0.0, "G", f"sc_max[{s.id},{t}]", "sc_max")
        hx.append((r, _xindex(case, t, "s", k), -s.p_charge_max))
    for k, s in enumerate(case.storages):
        bvec = np.zeros(ncol)
        bvec[SD.start + k] = -1.0
        r = add(bvec, zA.copy(), zH, -s.p_discharge_max, "G", f"sd_max[{s.id},{t}]", "sd_max")
        hx.append((r, _xindex(case, t, "s", k), s.p_discharge_max))

    for k in terminal:
        s = case.storages[k]
        bvec = np.zeros(ncol)
        bvec[E.start + k] = 1.0
        bvec[cm.block("term").start + k] = 1.0
        add(bvec, zA.copy(), zH, s.e_terminal_min, "G", f"terminal[{s.id}]", "terminal")

    m = len(h0)
    B = np.array(rows_B).reshape(m, ncol)
    A = np.array(rows_A).reshape(m, N)
    H = np.array(rows_H).reshape(m, nr)
    h0 = np.array(h0, dtype=float)
    if hx:
        r_, c_, v_ = zip(*hx)
        Hx = sp.csr_matrix((v_, (r_, c_)), shape=(m, nx))
    else:
        Hx = sp.csr_matrix((m, nx))
    h = h0 + Hx @ x.flat()

    cost = np.zeros(ncol)
    cost[P] = [g.cost * td for g in case.generators]
    cost[cm.slack_cols] = pen * td
    lb = np.zeros(ncol)
    ub = np.full(ncol, np.inf)
    ub[P] = [g.p_max for g in case.generators]
    ub[SC] = [s.p_charge_max for s in case.storages]
    ub[SD] = [s.p_discharge_max for s in case.storages]
    lb[E] = [s.e_min for s in case.storages]
    ub[E] = [s.e_max for s in case.storages]
    term = cm.block("term")
    for k in range(ns):
        if k not in terminal:
            ub[term.start + k] = 0.0
    return StageForm(t, A, B, H, cost, h0, Hx, h, np.array(senses), lb, ub, cm, tuple(names), tuple(kinds))


def _hx_prev(hx, case, r, t, i, coef, h0):
    """Attach a term in x_{i,t-1}; at t = 1 it folds into the constant via the initial status."""
    if t == 1:
        h0[r] += coef * case.generators[i].initial_status
    else:
        hx.append((r, _xindex(case, t - 1, "g", i), coef))
