import numpy as np
import pytest

import corpus
from oracles import nested_tree_value
from radpuc.config import RunConfig
from radpuc.driver import run_radp, run_rfr
from radpuc.errors import ResourceError
from radpuc.evaluation import VertexTree, oracle_worst_case, sample_paths, simulate_policy, simulate_report
from radpuc.generate import toy_case
from radpuc.model import all_on, build_uncertainty_set, compile_stages, initial_state


def path_value(forms, path, y0):
    # a single path is a tree with one vertex per stage
    return nested_tree_value(forms, [np.atleast_2d(xi) for xi in path], y0)


@pytest.mark.parametrize("i", [2, 3])
def test_oracle_matches_independent_nested_builder(i):
    case, uset = corpus.case(i), corpus.uset(i)
    x = corpus.run(i, "rddp").x
    forms = compile_stages(case, uset, x)
    tree = VertexTree(uset)
    ref = nested_tree_value(forms, tree.vertices, initial_state(case))
    assert oracle_worst_case(case, x, uset).value == pytest.approx(ref, rel=1e-8)


def test_oracle_dominates_anticipative_paths():
    case = toy_case(4, T=2, nr=1)
    uset = build_uncertainty_set(case)
    x = all_on(case)
    forms = compile_stages(case, uset, x)
    tree = VertexTree(uset)
    assert tree.path_count == 4
    y0 = initial_state(case)
    flat = max(path_value(forms, p, y0) for p in tree.paths())
    assert oracle_worst_case(case, x, uset).value >= flat - 1e-7 * abs(flat)


def test_zero_width_oracle_is_deterministic_lp():
    case = toy_case(6, T=3, nr=2)
    uset = build_uncertainty_set(case, 0.0)
    x = all_on(case)
    forms = compile_stages(case, uset, x)
    ref = path_value(forms, uset.nominal, initial_state(case))
    assert oracle_worst_case(case, x, uset).value == pytest.approx(ref, rel=1e-8)


def test_oracle_monotone_in_width():
    case = toy_case(3, T=3, nr=2)
    x = all_on(case)
    vals = [oracle_worst_case(case, x, build_uncertainty_set(case, s)).value for s in (0.0, 0.5, 1.0)]
    assert vals[0] <= vals[1] + 1e-7 * abs(vals[1]) and vals[1] <= vals[2] + 1e-7 * abs(vals[2])


def test_oracle_cap():
    case = toy_case(3, T=3, nr=2)
    with pytest.raises(ResourceError):
        oracle_worst_case(case, all_on(case), build_uncertainty_set(case), cap=32)


def test_nonanticipative_simulation():
    i = 3
    case, uset = corpus.case(i), corpus.uset(i)
    rep = corpus.run(i, "radp")
    base = sample_paths(uset, 6, 11)
    other = sample_paths(uset, 6, 12)
    for t in range(1, case.T):
        mixed = base.copy()
        mixed[:, t:] = other[:, t:]
        a = simulate_report(case, uset, rep, samples=base)
        b = simulate_report(case, uset, rep, samples=mixed)
        for da, db in zip(a.dispatch, b.dispatch):
            np.testing.assert_array_equal(da[:t], db[:t])


@pytest.mark.parametrize("mode", ["radp", "rfr"])
def test_simulation_balance_and_robustness(mode):
    i = 7
    case, uset = corpus.case(i), corpus.uset(i)
    sim = simulate_report(case, uset, corpus.run(i, mode), paths=200, seed=i)
    assert sim.balance_residual <= 1e-7
    assert sim.violations == 0
    assert np.all(np.isfinite(sim.costs))


def test_zero_width_simulations_agree_with_deterministic():
    case = toy_case(5, T=3, nr=1)
    uset = build_uncertainty_set(case, 0.0)
    a = run_radp(case, uset, RunConfig(scale=0.0))
    b = run_rfr(case, uset, RunConfig(mode="rfr", scale=0.0))
    sa = simulate_report(case, uset, a, paths=5)
    sb = simulate_report(case, uset, b, paths=5)
    assert sa.mean == pytest.approx(sb.mean, rel=1e-7)
    assert sa.mean == pytest.approx(a.objective, rel=1e-7)


def test_nominal_path_single_stage_equals_direct_lp():
    case = toy_case(0, T=1, nr=1)
    uset = build_uncertainty_set(case)
    rep = run_radp(case, uset)
    sim = simulate_report(case, uset, rep, samples=uset.nominal[None])
    forms = compile_stages(case, uset, rep.x)
    ref = path_value(forms, uset.nominal, initial_state(case)) + rep.x.startup_cost(case)
    assert sim.costs[0] == pytest.approx(ref, rel=1e-8)


def test_sampling_and_csv_are_reproducible(tmp_path):
    i = 0
    case, uset = corpus.case(i), corpus.uset(i)
    np.testing.assert_array_equal(sample_paths(uset, 10, 3), sample_paths(uset, 10, 3))
    s = sample_paths(uset, 50, 3)
    assert np.all(s >= uset.lower) and np.all(s <= uset.upper)
    rep = corpus.run(i, "radp")
    out = []
    for k in range(2):
        p = tmp_path / f"s{k}.csv"
        simulate_report(case, uset, rep, paths=20, seed=3).write_csv(p)
        out.append(p.read_bytes())
    assert out[0] == out[1]


def test_budgeted_sampling_respects_budget():
    case = toy_case(3, T=2, nr=2)
    uset = build_uncertainty_set(case, budget=1.0)
    for path in sample_paths(uset, 30, 0):
        assert all(uset.contains(t + 1, xi) for t, xi in enumerate(path))


def test_simulation_requires_policy_data():
    case = toy_case(0, T=2, nr=1)
    uset = build_uncertainty_set(case)
    with pytest.raises(ValueError):
        simulate_policy(case, uset, "rfr", all_on(case))
    with pytest.raises(ValueError):
        simulate_policy(case, uset, "radp", all_on(case))
