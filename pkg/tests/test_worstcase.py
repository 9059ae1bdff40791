import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import highs_lp
from radpuc.errors import ResourceError
from radpuc.generate import toy_case
from radpuc.lpsolve import LinearProgram, solve_lp
from radpuc.model import (UncertaintySet, all_on, build_uncertainty_set, compile_stages, initial_state,
                          state_bounds)
from radpuc.upper import build_upper_lp, new_candidate_pools, UpperSolver
from radpuc.worstcase import (WorstCaseGenerator, best_response_vertex, budget_vertices, dualize,
                              mccormick_admits, mccormick_rows, round_to_budget_vertex, vertex_count)


def _box(lo, hi, budget=None):
    lo, hi = np.atleast_2d(lo).astype(float), np.atleast_2d(hi).astype(float)
    return UncertaintySet(lo, hi, (lo + hi) / 2, None if budget is None else np.atleast_1d(budget).astype(float))


def test_mccormick_toy_value_is_one():
    # max theta with theta <= eta * xi relaxed over eta, xi in [0, 1]
    a_th, a_eta, a_xi, rhs = mccormick_rows([0.0], [1.0], [0.0], [1.0])
    G = np.column_stack([a_th[:, 0], a_eta[:, 0], a_xi[:, 0]])
    lp = LinearProgram(np.array([-1.0, 0.0, 0.0]), G, "GGGG", rhs[:, 0], np.array([-np.inf, 0, 0]),
                       np.array([np.inf, 1, 1]))
    sol = solve_lp(lp)
    assert -sol.objective == pytest.approx(1.0)


def test_mccormick_overestimates_at_midpoint():
    assert mccormick_admits(0.5, 0.5, 0.5, 0.0, 1.0, 0.0, 1.0)
    assert not mccormick_admits(0.51, 0.5, 0.5, 0.0, 1.0, 0.0, 1.0)
    # the true product is 0.25; the envelope admits more
    assert mccormick_admits(0.25, 0.5, 0.5, 0.0, 1.0, 0.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 5), st.floats(-5, 5), st.floats(0, 5), st.floats(0, 1), st.floats(0, 1))
def test_envelopes_contain_the_product(el, ew, xl, xw, a, b):
    eh, xh = el + ew, xl + xw
    eta, xi = el + a * ew, xl + b * xw
    assert mccormick_admits(eta * xi, eta, xi, el, eh, xl, xh, tol=1e-9)


def test_vertex_counts_and_budget():
    u = _box([0, 0, 0], [1, 1, 1])
    assert vertex_count(u, 1) == 8
    assert budget_vertices(u, 1).shape == (8, 3)
    ub = _box([0, 0, 0], [2, 2, 2], budget=1)
    v = budget_vertices(ub, 1)
    assert len(v) == vertex_count(ub, 1) == 6
    assert all(ub.budget_usage(1, row) <= 1 + 1e-12 for row in v)
    half = _box([0, 0], [2, 2], budget=1.5)
    vh = budget_vertices(half, 1)
    assert len(vh) == vertex_count(half, 1)
    assert all(half.budget_usage(1, row) == pytest.approx(1.5) for row in vh)


def test_vertex_cap():
    u = _box(np.zeros(21), np.ones(21))
    with pytest.raises(ResourceError):
        budget_vertices(u, 1)


def test_budget_rounding():
    u = _box([0, 0, 0], [2, 2, 2], budget=1.5)
    out = round_to_budget_vertex(u, 1, np.array([1.9, 0.4, 1.6]))
    np.testing.assert_allclose(out, [2.0, 1.0, 1.5])
    br = best_response_vertex(u, 1, np.array([-3.0, 0.0, 1.0]), np.ones(3))
    np.testing.assert_allclose(br, [0.0, 1.0, 1.5])
    free = _box([0, 0], [2, 2])
    np.testing.assert_allclose(best_response_vertex(free, 1, np.array([1.0, 0.0]), np.array([0.3, 0.7])), [2.0, 0.7])


def _instance(seed, T=2, nr=2, updates=3, budget=None):
    case = toy_case(seed, T=T, nr=nr)
    uset = build_uncertainty_set(case, budget=budget)
    forms = compile_stages(case, uset, all_on(case))
    pools = new_candidate_pools(case, uset)
    lo, hi = state_bounds(case)
    rng = np.random.default_rng(seed)
    up = UpperSolver(forms)
    for _ in range(updates):
        y = rng.uniform(lo, hi)
        xi = uset.upper[T - 1]
        pools[T].update(y, up.solve(T, y, xi, pools[T + 1]).value, "t")
    return case, uset, forms, pools, rng, lo, hi


def test_dual_value_matches_primal():
    case, uset, forms, pools, rng, lo, hi = _instance(0)
    y = rng.uniform(lo, hi)
    xi = uset.lower[0]
    lp = build_upper_lp(forms[0], y, xi, pools[2])
    H = np.vstack([forms[0].H, np.zeros((lp.num_rows - forms[0].num_rows, uset.nr))])
    base = build_upper_lp(forms[0], y, np.zeros(uset.nr), pools[2])
    d = dualize(base, H)
    M = d.constraint_matrix()
    lb, ub = d.bounds()
    c = -(d.objective() + np.concatenate([H @ xi, np.zeros(d.nvar - d.m)]))
    dual = solve_lp(LinearProgram(c, M, "E" * M.shape[0], d.c, lb, ub))
    st_, ref, _ = highs_lp(lp)
    assert -dual.objective == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_vertex_and_bigm_agree(seed):
    case, uset, forms, pools, rng, lo, hi = _instance(seed)
    gen = WorstCaseGenerator(forms, uset)
    for _ in range(3):
        y = rng.uniform(lo, hi)
        v = gen.exact(1, y, pools[2], "vertex")
        b = gen.exact(1, y, pools[2], "bigm")
        assert b.value == pytest.approx(v.value, rel=1e-7)
        assert uset.contains(1, b.scenario)


def test_bigm_with_budget_matches_vertex():
    case, uset, forms, pools, rng, lo, hi = _instance(3, nr=2, budget=1.0)
    gen = WorstCaseGenerator(forms, uset)
    y = rng.uniform(lo, hi)
    assert gen.exact(1, y, pools[2], "bigm").value == pytest.approx(gen.exact(1, y, pools[2], "vertex").value,
                                                                    rel=1e-7)


def test_bigm_rejects_fractional_budget():
    case, uset, forms, pools, rng, lo, hi = _instance(3, nr=2, budget=1.5, updates=0)
    with pytest.raises(ValueError):
        WorstCaseGenerator(forms, uset).exact(1, initial_state(case), pools[2], "bigm")


@pytest.mark.parametrize("seed", [0, 4])
def test_mccormick_dominates_exact(seed):
    case, uset, forms, pools, rng, lo, hi = _instance(seed)
    gen = WorstCaseGenerator(forms, uset)
    for _ in range(3):
        y = rng.uniform(lo, hi)
        mc = gen.mccormick(1, y, pools[2])
        ex = gen.exact(1, y, pools[2], "vertex")
        assert mc.value >= ex.value - 1e-7 * max(1.0, abs(ex.value))
        assert uset.contains(1, mc.scenario)


def test_zero_width_returns_nominal():
    case = toy_case(0, T=2, nr=2)
    uset = build_uncertainty_set(case, 0.0)
    forms = compile_stages(case, uset, all_on(case))
    pools = new_candidate_pools(case, uset)
    gen = WorstCaseGenerator(forms, uset)
    y = initial_state(case)
    for method in ("vertex", "bigm"):
        np.testing.assert_allclose(gen.exact(1, y, pools[2], method).scenario, uset.nominal[0])
    np.testing.assert_allclose(gen.mccormick(1, y, pools[2]).scenario, uset.nominal[0])
