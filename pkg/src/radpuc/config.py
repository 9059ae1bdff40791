"""Run configuration read from TOML key-value text."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import CaseError

MODES = ("radp", "rddp", "rfr")
METHODS = ("mccormick", "vertex", "bigM")


@dataclass(frozen=True)
class RunConfig:
    mode: str = "radp"
    epsilon: float = 1e-6
    max_outer: int = 100
    max_inner: int = 200
    worst_case: Optional[str] = None   # None picks mccormick for radp, vertex otherwise
    penalty_factor: float = 1e4
    seed: int = 0
    paths: int = 200
    output_dir: str = "."
    scale: float = 1.0                 # uncertainty box half-width multiplier
    budget: Optional[float] = None     # per-stage uncertainty budget

    def __post_init__(self):
        if self.mode not in MODES:
            raise CaseError(f"config: mode must be one of {', '.join(MODES)}")
        if not self.epsilon > 0:
            raise CaseError("config: epsilon must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise CaseError("config: iteration caps must be at least 1")
        if self.paths < 1:
            raise CaseError("config: path count must be at least 1")
        if self.worst_case is not None and self.worst_case not in METHODS:
            raise CaseError(f"config: worst_case must be one of {', '.join(METHODS)}")
        if self.mode != "radp" and self.worst_case == "mccormick":
            raise CaseError(f"config: mode {self.mode} needs an exact worst-case method")
        if not self.penalty_factor > 0 or self.scale < 0:
            raise CaseError("config: penalty_factor must be positive and scale nonnegative")

    @property
    def method(self) -> str:
        if self.worst_case is not None:
            return self.worst_case
        return "mccormick" if self.mode == "radp" else "vertex"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def load_config(path=None, **overrides) -> RunConfig:
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as e:
            raise CaseError(f"{path}: {e.strerror}") from None
        except tomllib.TOMLDecodeError as e:
            raise CaseError(f"{path}: {e}") from None
    data.update({k: v for k, v in overrides.items() if v is not None})
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise CaseError(f"{path or 'config'}: unknown keys {', '.join(unknown)}")
    try:
        return RunConfig(**data)
    except TypeError as e:
        raise CaseError(f"{path or 'config'}: {e}") from None
