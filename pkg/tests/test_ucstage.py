import numpy as np
import pytest

from oracles import uc_extensive
from radpuc.generate import generate_case, toy_case
from radpuc.model import build_uncertainty_set, check_commitment_logic
from radpuc.ucstage import ScenarioSet, UCMaster, solve_master


def _master(case, uset, paths):
    m = UCMaster(case, uset)
    for p in paths:
        m.append_path(p)
    return m


def test_matches_independent_extensive_form():
    case = toy_case(5, T=4, nr=1)
    uset = build_uncertainty_set(case)
    paths = [uset.nominal, np.where(np.arange(4)[:, None] % 2 == 0, uset.upper, uset.lower)]
    res = _master(case, uset, paths).solve()
    ref, xg = uc_extensive(case, paths)
    assert res.objective == pytest.approx(ref, rel=1e-7)


def test_zero_width_equals_deterministic_uc():
    case = toy_case(1, T=3, nr=2)
    uset = build_uncertainty_set(case, 0.0)
    res = solve_master(case, uset, [uset.nominal])
    ref, _ = uc_extensive(case, [uset.nominal], envelope=False)
    assert res.objective == pytest.approx(ref, rel=1e-7)


def test_single_generator_forced_on():
    case = generate_case(buses=2, generators=1, storages=0, renewables=1, T=3, seed=2)
    uset = build_uncertainty_set(case)
    res = solve_master(case, uset, [uset.nominal, uset.upper])
    assert np.all(res.x.gen == 1)


def test_append_path_semantics():
    case = toy_case(0, T=2, nr=1)
    uset = build_uncertainty_set(case)
    m = _master(case, uset, [uset.nominal])
    n0 = m.build()[0].num_vars
    assert not m.append_path(uset.nominal + 1e-12)
    assert m.build()[0].num_vars == n0
    assert m.append_path(uset.upper)
    assert m.build()[0].num_vars - n0 == case.T * m.recourse_columns_per_stage()
    with pytest.raises(ValueError):
        m.append_path(uset.upper + 1.0)


def test_objective_monotone_in_scenarios():
    case = toy_case(2, T=3, nr=2)
    uset = build_uncertainty_set(case)
    rng = np.random.default_rng(0)
    m = _master(case, uset, [uset.nominal])
    prev = m.solve().objective
    for _ in range(3):
        m.append_path(np.where(rng.random(uset.upper.shape) < 0.5, uset.lower, uset.upper))
        cur = m.solve().objective
        assert cur >= prev - 1e-7 * abs(prev)
        prev = cur


@pytest.mark.parametrize("seed", [0, 3, 6])
def test_commitment_logic_and_envelope_nonanticipativity(seed):
    case = toy_case(seed, T=3, nr=2)
    uset = build_uncertainty_set(case)
    res = solve_master(case, uset, [uset.nominal, uset.upper, uset.lower])
    assert check_commitment_logic(case, res.x) == []
    env = res.envelope
    assert np.all(env.pg_min <= env.pg_max + 1e-9)
    assert np.all(env.e_min <= env.e_max + 1e-9)
    rng = np.random.default_rng(seed)
    td = case.t_delta
    x = res.x.gen
    for _ in range(100):
        p_prev = np.array([g.initial_output for g in case.generators])
        x_prev = np.array([g.initial_status for g in case.generators])
        e = np.array([s.e_initial for s in case.storages])
        for t in range(case.T):
            p = rng.uniform(env.pg_min[t], env.pg_max[t])
            sc = rng.uniform(env.sc_min[t], env.sc_max[t])
            sd = rng.uniform(env.sd_min[t], env.sd_max[t])
            for i, g in enumerate(case.generators):
                up = g.ramp_up * td * x_prev[i] + g.startup_ramp * (x[t, i] - x_prev[i]) + g.p_max * (1 - x[t, i])
                dn = g.ramp_down * td * x[t, i] + g.shutdown_ramp * (x_prev[i] - x[t, i]) + g.p_max * (1 - x_prev[i])
                assert p[i] - p_prev[i] <= up + 1e-7
                assert p_prev[i] - p[i] <= dn + 1e-7
            eff_c = np.array([s.eff_charge for s in case.storages])
            eff_d = np.array([s.eff_discharge for s in case.storages])
            e = e + eff_c * sc * td - sd * td / eff_d
            assert np.all(e >= env.e_min[t] - 1e-7) and np.all(e <= env.e_max[t] + 1e-7)
            p_prev, x_prev = p, x[t]


def test_warm_start_and_lp_dump(tmp_path):
    case = toy_case(0, T=2, nr=1)
    uset = build_uncertainty_set(case)
    m = _master(case, uset, [uset.nominal])
    first = m.solve()
    again = m.solve(warm=first.x)
    assert again.x == first.x
    assert again.objective == pytest.approx(first.objective, rel=1e-9)
    path = tmp_path / "master.lp"
    m.dump_lp(path)
    text = path.read_text()
    assert "Binaries" in text or "Binary" in text


def test_scenario_set_dedup():
    case = toy_case(0, T=2, nr=1)
    uset = build_uncertainty_set(case)
    s = ScenarioSet(uset)
    assert s.add(uset.nominal)
    assert not s.add(np.round(uset.nominal, 12))
    assert len(s) == 1
