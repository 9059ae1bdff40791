"""Seeded random case generator for desk-scale experiments."""

from __future__ import annotations

import json

import numpy as np

from .model import case_from_dict, case_to_dict, compute_shift_factors


def _r(v, nd=4):
    return float(round(float(v), nd))


def generate_case_dict(buses=5, generators=3, storages=1, lines=None, loads=None, renewables=1, T=3,
                       seed=0, t_delta=1.0, margin=0.2, deviation=0.25, renewable_share=0.25) -> dict:
    """Build a random case dictionary.

    Installed capacity exceeds peak net demand by ``margin`` and every unit
    starts online at a dispatch that covers stage-one net demand, so the
    nominal deterministic problem needs no slack.
    """
    if min(buses, T) < 1 or generators < 1:
        raise ValueError("buses, generators and T must be positive")
    rng = np.random.default_rng(seed)
    nb = buses
    nl = min(nb - 1 + max(1, nb // 3), nb * (nb - 1) // 2) if lines is None else lines
    if nb == 1:
        nl = 0
    max_edges = nb * (nb - 1) // 2
    if nl < nb - 1 or nl > max_edges:
        raise ValueError(f"line count must lie in [{nb - 1}, {max_edges}]")
    nd = max(1, (2 * nb) // 3) if loads is None else loads
    bus_ids = [f"b{i + 1}" for i in range(nb)]

    # spanning tree plus random chords
    edges = []
    for i in range(1, nb):
        edges.append((int(rng.integers(0, i)), i))
    present = {tuple(sorted(e)) for e in edges}
    while len(edges) < nl:
        a, b = sorted(int(v) for v in rng.choice(nb, size=2, replace=False))
        if (a, b) not in present:
            present.add((a, b))
            edges.append((a, b))

    load_buses = sorted(rng.choice(nb, size=min(nd, nb), replace=False).tolist()) if nd <= nb else \
        sorted(rng.integers(0, nb, size=nd).tolist())
    peak = 100.0 * generators
    shape = 0.75 + 0.25 * np.sin(np.linspace(0.3, 2.8, T) + rng.uniform(0, 0.5))
    weights = rng.uniform(0.5, 1.5, size=len(load_buses))
    weights /= weights.sum()
    demand = np.array([[_r(peak * s * w, 3) for s in shape] for w in weights]).reshape(len(load_buses), T)
    total_d = demand.sum(axis=0)

    ren_buses = rng.integers(0, nb, size=renewables)
    ren_nom = np.zeros((renewables, T))
    ren_dev = np.zeros((renewables, T))
    for r in range(renewables):
        prof = rng.uniform(0.6, 1.0, size=T)
        ren_nom[r] = np.round(renewable_share * total_d * prof / renewables, 3)
        ren_dev[r] = np.round(deviation * ren_nom[r], 3)
    net = total_d - ren_nom.sum(axis=0)

    cap = rng.uniform(0.6, 1.4, size=generators)
    cap = cap / cap.sum() * (1.0 + margin) * (net + ren_dev.sum(axis=0)).max()
    cap = np.round(cap, 3)
    share = net[0] / cap.sum()
    gens = []
    for i in range(generators):
        pmax = float(cap[i])
        pmin = _r(0.1 * pmax, 3)
        p0 = _r(min(pmax, max(pmin, share * pmax)), 3)
        gens.append({
            "id": f"g{i + 1}", "bus": bus_ids[int(rng.integers(0, nb))],
            "cost": _r(rng.uniform(10, 40), 2), "startup_cost": _r(rng.uniform(50, 400), 1),
            "p_min": pmin, "p_max": pmax,
            "ramp_up": _r(0.6 * pmax / t_delta, 3), "ramp_down": _r(0.6 * pmax / t_delta, 3),
            "startup_ramp": _r(max(pmin, 0.6 * pmax), 3), "shutdown_ramp": _r(max(pmin, 0.6 * pmax), 3),
            "min_up": int(rng.integers(1, 3)), "min_down": int(rng.integers(1, 3)),
            "initial_status": 1, "initial_output": p0,
        })

    stos = []
    for k in range(storages):
        emax = _r(rng.uniform(0.1, 0.3) * peak / max(storages, 1) * t_delta, 3)
        stos.append({
            "id": f"s{k + 1}", "bus": bus_ids[int(rng.integers(0, nb))],
            "e_min": _r(0.1 * emax, 3), "e_max": emax,
            "p_charge_max": _r(0.4 * emax / t_delta, 3), "p_discharge_max": _r(0.4 * emax / t_delta, 3),
            "eff_charge": _r(rng.uniform(0.88, 0.96), 3), "eff_discharge": _r(rng.uniform(0.88, 0.96), 3),
            "e_initial": _r(0.5 * emax, 3),
        })

    data = {
        "buses": bus_ids,
        "lines": [{"id": f"l{k + 1}", "from_bus": bus_ids[a], "to_bus": bus_ids[b],
                   "susceptance": _r(rng.uniform(5, 20), 3), "flow_limit": 1.0} for k, (a, b) in enumerate(edges)],
        "generators": gens,
        "storages": stos,
        "loads": [{"bus": bus_ids[b], "demand": demand[j].tolist()} for j, b in enumerate(load_buses)],
        "renewables": [{"id": f"r{r + 1}", "bus": bus_ids[int(ren_buses[r])], "nominal": ren_nom[r].tolist(),
                        "deviation": ren_dev[r].tolist()} for r in range(renewables)],
        "horizon": {"T": int(T), "t_delta_hours": float(t_delta), "ref_bus": bus_ids[0]},
    }
    _set_flow_limits(data, cap, net)
    return data


def _set_flow_limits(data, cap, net):
    """Size line limits with headroom over a proportional nominal dispatch."""
    case = case_from_dict(data)
    ptdf = compute_shift_factors(case)
    idx = case.bus_index()
    worst = np.zeros(case.nl)
    for t in range(case.T):
        inj = np.zeros(len(case.buses))
        for g, c in zip(case.generators, cap):
            inj[idx[g.bus]] += c * net[t] / cap.sum()
        for ld in case.loads:
            inj[idx[ld.bus]] -= ld.demand[t]
        for r in case.renewables:
            inj[idx[r.bus]] += r.nominal[t]
        worst = np.maximum(worst, np.abs(ptdf @ inj))
    floor = 0.1 * float(np.max(cap))
    for l, w in zip(data["lines"], worst):
        l["flow_limit"] = _r(1.5 * w + floor, 3)


def generate_case(**kw):
    return case_from_dict(generate_case_dict(**kw))


def dumps_case(data: dict) -> str:
    return json.dumps(data, indent=1) + "\n"


def toy_case(seed: int, T: int = 2, nr: int = 1, **kw):
    """The small test-corpus shape: 3 generators, 1 storage, 5 buses."""
    return generate_case(buses=5, generators=3, storages=1, renewables=nr, T=T, seed=seed, **kw)


def reference_case_counts():
    """Element counts of the 118-bus benchmark system."""
    return dict(buses=118, generators=54, storages=10, lines=179, loads=91)


__all__ = ["generate_case_dict", "generate_case", "dumps_case", "toy_case", "case_to_dict"]
