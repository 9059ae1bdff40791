"""Seeded toy corpus shared by the driver and acceptance tests (runs are cached per process)."""

from functools import lru_cache

from radpuc.config import RunConfig
from radpuc.driver import run_radp, run_rfr
from radpuc.evaluation import oracle_worst_case
from radpuc.generate import toy_case
from radpuc.model import build_uncertainty_set

# (seed, T, Nr): 3 generators, 1 storage, 5 buses
CORPUS = [(i, 2 + i % 2, 1 + (i // 2) % 2) for i in range(20)]


@lru_cache(maxsize=None)
def case(i):
    seed, T, nr = CORPUS[i]
    return toy_case(seed, T=T, nr=nr)


@lru_cache(maxsize=None)
def uset(i, scale=1.0):
    return build_uncertainty_set(case(i), scale)


@lru_cache(maxsize=None)
def run(i, mode, scale=1.0):
    cfg = RunConfig(mode=mode, scale=scale)
    if mode == "rfr":
        return run_rfr(case(i), uset(i, scale), cfg)
    return run_radp(case(i), uset(i, scale), cfg)


@lru_cache(maxsize=None)
def oracle(i, x, scale=1.0):
    return oracle_worst_case(case(i), x, uset(i, scale)).value
