import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radpuc.errors import CaseError, StructuralError
from radpuc.generate import generate_case, generate_case_dict, reference_case_counts, toy_case
from radpuc.model import (
    CommitmentSchedule, build_uncertainty_set, case_from_dict, compile_stages, compute_shift_factors,
    dc_flows, initial_state, load_case, state_dimension,
)


def _gen(i="g1", bus="b1", **kw):
    g = dict(id=i, bus=bus, cost=10.0, startup_cost=5.0, p_min=0.0, p_max=100.0, ramp_up=50.0, ramp_down=50.0,
             startup_ramp=50.0, shutdown_ramp=50.0, min_up=1, min_down=1, initial_status=1, initial_output=20.0)
    g.update(kw)
    return g


def _case(buses=("b1",), lines=(), gens=None, stos=(), loads=None, ren=(), T=1, ref="b1"):
    return dict(buses=list(buses), lines=list(lines), generators=gens or [_gen()], storages=list(stos),
                loads=loads if loads is not None else [dict(bus="b1", demand=[30.0] * T)],
                renewables=list(ren), horizon=dict(T=T, t_delta_hours=1.0, ref_bus=ref))


def _sto(**kw):
    s = dict(id="s1", bus="b1", e_min=1.0, e_max=10.0, p_charge_max=4.0, p_discharge_max=5.0,
             eff_charge=0.9, eff_discharge=0.8, e_initial=5.0)
    s.update(kw)
    return s


def test_minimal_case(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(_case()))
    case = load_case(p)
    assert state_dimension(case) == 1


def test_invariant_violation_names_storage():
    with pytest.raises(CaseError, match="storage s1"):
        case_from_dict(_case(stos=[_sto(e_min=8.0, e_max=5.0, e_initial=6.0)]))


def test_parse_error_has_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"buses": [\n  "b1",,\n]}')
    with pytest.raises(CaseError, match="line 2"):
        load_case(p)


def test_schema_error_names_field():
    d = _case()
    d["generators"][0]["p_max"] = "lots"
    with pytest.raises(CaseError, match="generators/0/p_max"):
        case_from_dict(d)


def test_reference_sized_case_counts():
    case = generate_case(T=2, seed=1, renewables=2, **reference_case_counts())
    assert (len(case.buses), case.ng, case.ns, case.nl, len(case.loads)) == (118, 54, 10, 179, 91)
    assert state_dimension(case) == 64


def test_state_dimension_small():
    assert state_dimension(case_from_dict(_case(gens=[_gen("a"), _gen("b"), _gen("c")],
                                                stos=[_sto(id="x"), _sto(id="y")]))) == 5


def test_shift_factor_two_bus():
    case = case_from_dict(_case(buses=("b1", "b2"), lines=[dict(id="l", from_bus="b2", to_bus="b1",
                                                                   susceptance=3.0, flow_limit=9.0)]))
    ptdf = compute_shift_factors(case)
    assert ptdf.shape == (1, 2)
    assert ptdf[0, 1] == pytest.approx(1.0)
    assert ptdf[0, 0] == 0.0


def test_shift_factor_triangle():
    lines = [dict(id="12", from_bus="b2", to_bus="b1", susceptance=1.0, flow_limit=1.0),
             dict(id="23", from_bus="b2", to_bus="b3", susceptance=1.0, flow_limit=1.0),
             dict(id="31", from_bus="b3", to_bus="b1", susceptance=1.0, flow_limit=1.0)]
    case = case_from_dict(_case(buses=("b1", "b2", "b3"), lines=lines))
    ptdf = compute_shift_factors(case)
    assert ptdf[:, 1] == pytest.approx([2 / 3, 1 / 3, 1 / 3])
    assert np.all(ptdf[:, 0] == 0.0)


def test_disconnected_network():
    lines = [dict(id="12", from_bus="b1", to_bus="b2", susceptance=1.0, flow_limit=1.0)]
    with pytest.raises(CaseError, match="not connected"):
        case_from_dict(_case(buses=("b1", "b2", "b3"), lines=lines))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), nb=st.integers(2, 9))
def test_shift_factors_reproduce_dc_flows(seed, nb):
    case = generate_case(buses=nb, generators=2, storages=0, renewables=0, T=1, seed=seed)
    ptdf = compute_shift_factors(case)
    rng = np.random.default_rng(seed)
    inj = rng.normal(size=nb)
    inj -= inj.mean()
    direct = dc_flows(case, inj)
    assert np.allclose(ptdf @ inj, direct, rtol=1e-9, atol=1e-9 * np.abs(direct).max())


def test_compile_single_generator_coupling():
    case = case_from_dict(_case(T=2, loads=[dict(bus="b1", demand=[30.0, 40.0])]))
    x = CommitmentSchedule(np.ones((2, 1)), np.zeros((2, 0)))
    forms = compile_stages(case, build_uncertainty_set(case), x)
    A2 = forms[1].A
    nz_rows = np.flatnonzero(np.abs(A2).sum(axis=1))
    assert A2.shape[1] == 1
    assert [forms[1].row_kinds[r] for r in nz_rows] == ["ramp_up", "ramp_dn"]
    assert list(A2[nz_rows, 0]) == [1.0, -1.0]


def test_zero_width_box_constant_rhs():
    case = toy_case(0, T=2, nr=2)
    u = build_uncertainty_set(case, scale=0.0)
    assert np.all(u.lower == u.upper)


def test_storage_energy_row_exact():
    case = case_from_dict(_case(stos=[_sto()]))
    x = CommitmentSchedule(np.ones((1, 1)), np.ones((1, 1)))
    f = compile_stages(case, build_uncertainty_set(case), x)[0]
    r = f.row_kinds.index("energy")
    cm = f.cols
    assert f.senses[r] == "E"
    assert f.B[r, cm.block("E").start] == 1.0
    assert f.B[r, cm.block("sc").start] == -0.9 * 1.0
    assert f.B[r, cm.block("sd").start] == 1.0 / 0.8
    assert f.A[r, 1] == -1.0 and f.A[r, 0] == 0.0
    assert f.h[r] == 0.0


def test_row_count_audit():
    case = generate_case(buses=6, generators=3, storages=2, renewables=2, T=4, seed=5)
    x = CommitmentSchedule(np.ones((4, 3)), np.zeros((4, 2)))
    forms = compile_stages(case, build_uncertainty_set(case), x)
    bound_rows = 2 * case.ng + 2 * case.ns
    for f in forms[1:]:
        assert f.num_rows == 2 * case.ng + case.ns + 2 * case.nl + 1 + bound_rows
        assert f.N == case.ng + case.ns


# -- an independent evaluator of the physical constraints ----------------------------

def _direct_ok(case, x, t, xi, prev, p, sc, sd, E, tol=1e-7):
    td = case.t_delta
    idx = case.bus_index()
    xg, xs = x.gen[t - 1], x.sto[t - 1]
    xg_prev = x.gen[t - 2] if t > 1 else np.array([g.initial_status for g in case.generators])
    p_prev, E_prev = prev[:case.ng], prev[case.ng:]
    for i, g in enumerate(case.generators):
        if p[i] - p_prev[i] > g.ramp_up * td * xg_prev[i] + g.startup_ramp * (xg[i] - xg_prev[i]) \
                + g.p_max * (1 - xg[i]) + tol:
            return False
        if p_prev[i] - p[i] > g.ramp_down * td * xg[i] + g.shutdown_ramp * (xg_prev[i] - xg[i]) \
                + g.p_max * (1 - xg_prev[i]) + tol:
            return False
        if not xg[i] * g.p_min - tol <= p[i] <= xg[i] * g.p_max + tol:
            return False
    for k, s in enumerate(case.storages):
        if abs(E[k] - (E_prev[k] + sc[k] * s.eff_charge * td - sd[k] * td / s.eff_discharge)) > tol:
            return False
        if not s.e_min - tol <= E[k] <= s.e_max + tol:
            return False
        if not -tol <= sc[k] <= s.p_charge_max * xs[k] + tol:
            return False
        if not -tol <= sd[k] <= s.p_discharge_max * (1 - xs[k]) + tol:
            return False
    inj = np.zeros(len(case.buses))
    for i, g in enumerate(case.generators):
        inj[idx[g.bus]] += p[i]
    for k, s in enumerate(case.storages):
        inj[idx[s.bus]] += sd[k] - sc[k]
    for r, ren in enumerate(case.renewables):
        inj[idx[ren.bus]] += xi[r]
    for ld in case.loads:
        inj[idx[ld.bus]] -= ld.demand[t - 1]
    if abs(inj.sum()) > tol:
        return False
    if case.nl:
        flows = dc_flows(case, inj)
        if np.any(np.abs(flows) > np.array([l.flow_limit for l in case.lines]) + tol):
            return False
    return True


def _rows_ok(f, prev, xi, y, tol=1e-7):
    act = f.A @ prev + f.B @ y - f.H @ xi - f.h
    eq = f.senses == "E"
    if np.any(np.abs(act[eq]) > tol) or np.any(act[~eq] < -tol):
        return False
    return bool(np.all(y >= f.lb - tol) and np.all(y <= f.ub + tol))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_stage_rows_match_physical_constraints(seed):
    rng = np.random.default_rng(seed)
    T = 3
    case = generate_case(buses=4, generators=2, storages=1, renewables=1, T=T, seed=seed % 50)
    x = CommitmentSchedule(rng.integers(0, 2, size=(T, 2)), rng.integers(0, 2, size=(T, 1)))
    u = build_uncertainty_set(case)
    forms = compile_stages(case, u, x)
    t = int(rng.integers(1, T + 1))
    f = forms[t - 1]
    cm = f.cols
    xi = rng.uniform(u.lower[t - 1], u.upper[t - 1])
    prev = initial_state(case) if t == 1 else rng.uniform(
        [0.0] * 2 + [s.e_min for s in case.storages], [g.p_max for g in case.generators] + [s.e_max for s in case.storages])
    # find a slack-free dispatch when one exists, then perturb it
    from scipy.optimize import linprog
    nz = np.zeros(f.num_cols)
    ub = f.ub.copy()
    ub[cm.slack_cols] = 0.0
    rhs = f.rhs(prev, xi)
    eq = f.senses == "E"
    res = linprog(rng.normal(size=f.num_cols) * (f.ub > 0), A_ub=-f.B[~eq], b_ub=-rhs[~eq], A_eq=f.B[eq], b_eq=rhs[eq],
                  bounds=list(zip(f.lb, np.where(np.isinf(ub), None, ub))), method="highs")
    y = res.x if res.status == 0 else np.clip(rng.normal(size=f.num_cols), f.lb, np.minimum(ub, 50))
    y = y.copy()
    y[cm.slack_cols] = 0.0
    if rng.random() < 0.5:
        j = int(rng.integers(0, cm.block("shed").start))
        y[j] += rng.choice([-1, 1]) * rng.uniform(0.5, 5.0)
    pick = lambda b: y[cm.block(b)]
    assert _rows_ok(f, prev, xi, y) == _direct_ok(case, x, t, xi, prev, pick("p"), pick("sc"), pick("sd"), pick("E"))


def test_generated_case_is_deterministic():
    a = json.dumps(generate_case_dict(seed=11, T=3))
    b = json.dumps(generate_case_dict(seed=11, T=3))
    assert a == b
