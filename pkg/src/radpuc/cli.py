"""Command line: gen, solve, simulate, oracle.

Exit codes: 0 success, 1 input error, 2 iteration or size cap reached.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import RunConfig, load_config
from .driver import SolveReport, run, write_trace_csv
from .errors import CaseError, RadpucError, ResourceError, StructuralError
from .evaluation import cut_pools_from_snapshot, oracle_worst_case, simulate_policy
from .generate import dumps_case, generate_case_dict
from .lower import dump_cut_pools
from .model import CommitmentSchedule, build_uncertainty_set, load_case, state_dimension
from .ucstage import RobustEnvelope
from .upper import dump_candidate_pools

EXIT_OK, EXIT_INPUT, EXIT_CAP = 0, 1, 2
REPORT_KEYS = ("mode", "termination", "objective", "lower", "upper", "startup_cost", "commitment", "config")


def _fix(v):
    """Round floats to 12 significant digits for byte-stable output."""
    if isinstance(v, float):
        return float(f"{v:.12g}") if np.isfinite(v) else str(v)
    if isinstance(v, dict):
        return {k: _fix(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_fix(x) for x in v]
    if isinstance(v, np.ndarray):
        return _fix(v.tolist())
    if isinstance(v, np.generic):
        return _fix(v.item())
    return v


def dump_json(data, path) -> None:
    with open(path, "w") as fh:
        json.dump(_fix(data), fh, indent=1, sort_keys=True)
        fh.write("\n")


@dataclass
class LoadedReport:
    mode: str
    x: CommitmentSchedule
    envelope: Optional[RobustEnvelope]
    cuts: Optional[dict]
    config: RunConfig
    data: dict


def load_report(path, case) -> LoadedReport:
    """Re-load a report written by ``solve`` and validate it against ``case``."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as e:
        raise CaseError(f"{path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise CaseError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    missing = [k for k in REPORT_KEYS if k not in data]
    if missing:
        raise CaseError(f"{path}: report lacks {', '.join(missing)}")
    x = CommitmentSchedule.from_dict(data["commitment"])
    if x.gen.shape != (case.T, case.ng) or x.sto.size != case.T * case.ns:
        raise CaseError(f"{path}: commitment does not match the case dimensions")
    x = CommitmentSchedule(x.gen, x.sto.reshape(case.T, case.ns))
    env = RobustEnvelope.from_dict(data["envelope"]) if data.get("envelope") else None
    if env is not None:
        env = RobustEnvelope(*(getattr(env, k).reshape(case.T, -1) if getattr(env, k).size else
                               np.zeros((case.T, 0)) for k in RobustEnvelope.__dataclass_fields__))
    cuts = None
    if data.get("cuts_file"):
        cpath = os.path.join(os.path.dirname(os.path.abspath(path)), data["cuts_file"])
        try:
            with open(cpath) as fh:
                cuts = cut_pools_from_snapshot(json.load(fh), case.T, state_dimension(case))
        except OSError as e:
            raise CaseError(f"{cpath}: {e.strerror}") from None
    cfg = RunConfig(**data["config"])
    return LoadedReport(data["mode"], x, env, cuts, cfg, data)


def write_report(report: SolveReport, out: str) -> str:
    os.makedirs(out, exist_ok=True)
    data = report.to_dict(timings=False)
    if report.cuts:
        dump_cut_pools(report.cuts, os.path.join(out, "cuts.json"))
        dump_candidate_pools(report.candidates, os.path.join(out, "candidates.json"))
        data["cuts_file"] = "cuts.json"
        data["candidates_file"] = "candidates.json"
    path = os.path.join(out, "report.json")
    dump_json(data, path)
    write_trace_csv(report.traces, os.path.join(out, "trace.csv"))
    return path


# -- commands -------------------------------------------------------------------------

def cmd_gen(args) -> int:
    data = generate_case_dict(buses=args.buses, generators=args.generators, storages=args.storages,
                              lines=args.lines, loads=args.loads, renewables=args.renewables, T=args.T,
                              seed=args.seed, t_delta=args.t_delta, margin=args.margin, deviation=args.deviation)
    text = dumps_case(data)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_solve(args) -> int:
    case = load_case(args.case)
    cfg = load_config(args.config, mode=args.mode, output_dir=args.out)
    report = run(case, cfg)
    path = write_report(report, cfg.output_dir)
    print(f"{report.mode}: {report.reason}, objective {report.objective:.12g}, report {path}")
    return EXIT_CAP if report.capped else EXIT_OK


def _uset_for(case, cfg: RunConfig):
    import dataclasses
    if cfg.penalty_factor != case.penalty_factor:
        case = dataclasses.replace(case, penalty_factor=cfg.penalty_factor)
    return case, build_uncertainty_set(case, cfg.scale, cfg.budget)


def cmd_simulate(args) -> int:
    case = load_case(args.case)
    rep = load_report(args.report, case)
    case, uset = _uset_for(case, rep.config)
    if rep.mode != "rfr" and rep.cuts is None:
        raise CaseError(f"{args.report}: no cut pools referenced")
    sim = simulate_policy(case, uset, rep.mode, rep.x, rep.cuts, rep.envelope, args.paths, args.seed)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.report)), "simulation.csv")
    sim.write_csv(out)
    print(f"{rep.mode}: mean {sim.mean:.12g}, max {sim.max:.12g}, slack stages {sim.violations}, csv {out}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    case = load_case(args.case)
    rep = load_report(args.report, case)
    case, uset = _uset_for(case, rep.config)
    res = oracle_worst_case(case, rep.x, uset, cap=args.cap)
    total = res.value + rep.x.startup_cost(case)
    out = {"oracle_dispatch": res.value, "oracle_objective": total, "paths": res.path_count,
           "root_values": res.root_values, "worst_root": res.worst_root,
           "report_lower": rep.data["lower"], "report_upper": rep.data["upper"]}
    if args.out:
        dump_json(out, args.out)
    print(f"oracle {res.value:.12g} over {res.path_count} paths (report lower {rep.data['lower']:.12g})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radpuc", description="Multistage robust unit commitment")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a seeded random case")
    g.add_argument("--buses", type=int, default=5)
    g.add_argument("--generators", type=int, default=3)
    g.add_argument("--storages", type=int, default=1)
    g.add_argument("--lines", type=int)
    g.add_argument("--loads", type=int)
    g.add_argument("--renewables", type=int, default=1)
    g.add_argument("--T", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--t-delta", type=float, default=1.0)
    g.add_argument("--margin", type=float, default=0.2)
    g.add_argument("--deviation", type=float, default=0.25)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="run RADP, RDDP or RFR")
    s.add_argument("case")
    s.add_argument("config", nargs="?")
    s.add_argument("--mode", choices=("radp", "rddp", "rfr"))
    s.add_argument("--out", help="output directory (overrides output_dir)")
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("simulate", help="Monte-Carlo sequential dispatch of a solved policy")
    m.add_argument("case")
    m.add_argument("report")
    m.add_argument("--paths", type=int, default=200)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")
    m.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", help="exact worst-case cost by vertex-tree enumeration")
    o.add_argument("case")
    o.add_argument("report")
    o.add_argument("--cap", type=int, default=4096)
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "paths", 1) < 1:
            raise CaseError("--paths must be at least 1")
        return args.func(args)
    except ResourceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CAP
    except (CaseError, StructuralError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except RadpucError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
