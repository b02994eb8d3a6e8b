"""Versioned JSON run configuration.

Unknown keys anywhere in the document are rejected, so a typo cannot
silently fall back to a default attack parameter.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Optional

from .campaign import CampaignConfig
from .errors import ConfigError
from .faults import FaultProfile
from .params import SchemeParams, get_params
from .solver import SolverConfig

SCHEMA_VERSION = 1

_CAMPAIGN_KEYS = {"beta", "filter_pool", "rejection_rate", "ciphertexts", "target_inequalities",
                  "block_size", "register_width"}
_SOLVER_KEYS = {f.name for f in fields(SolverConfig)} - {"threads"}
_TOP_KEYS = {"schema", "scheme", "order", "seed", "fault", "campaign", "solver", "sweep", "out"}

DEFAULT_SWEEP = [5000, 10000, 15000, 20000, 25000, 30000, 35000, 40000]


@dataclass
class RunConfig:
    scheme: SchemeParams
    profile: FaultProfile
    order: int = 1
    seed: int = 0
    campaign: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    sweep: list = field(default_factory=lambda: list(DEFAULT_SWEEP))
    out: str = "out"
    threads: int = 1

    def campaign_config(self) -> CampaignConfig:
        return CampaignConfig(self.scheme, self.profile, order=self.order, seed=self.seed,
                              threads=self.threads, **self.campaign)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(threads=self.threads, **self.solver)

    def validate(self) -> "RunConfig":
        self.campaign_config()
        self.solver_config()
        if any(int(s) <= 0 for s in self.sweep):
            raise ConfigError("sweep points must be positive")
        return self

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "scheme": self.scheme.name,
            "order": self.order,
            "seed": self.seed,
            "fault": self.profile.to_json(),
            "campaign": dict(self.campaign),
            "solver": dict(self.solver),
            "sweep": list(self.sweep),
            "out": self.out,
        }


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object")
    extra = set(obj) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def parse_config(obj: dict, seed: Optional[int] = None, threads: Optional[int] = None,
                 out: Optional[str] = None) -> RunConfig:
    _check_keys(obj, _TOP_KEYS, "config")
    if obj.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"config schema must be {SCHEMA_VERSION}, got {obj.get('schema')!r}")
    scheme = get_params(obj.get("scheme", "Kyber512"))
    profile = FaultProfile.from_json(obj.get("fault", FaultProfile.ideal().to_json()))
    camp = obj.get("campaign", {})
    _check_keys(camp, _CAMPAIGN_KEYS, "campaign")
    solv = obj.get("solver", {})
    _check_keys(solv, _SOLVER_KEYS, "solver")
    sweep = obj.get("sweep", DEFAULT_SWEEP)
    if not isinstance(sweep, list):
        raise ConfigError("sweep must be a list of inequality counts")
    cfg = RunConfig(
        scheme=scheme,
        profile=profile,
        order=int(obj.get("order", 1)),
        seed=int(seed if seed is not None else obj.get("seed", 0)),
        campaign=dict(camp),
        solver=dict(solv),
        sweep=[int(s) for s in sweep],
        out=out if out is not None else obj.get("out", "out"),
        threads=int(threads or 1),
    )
    try:
        return cfg.validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, **overrides) -> RunConfig:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(obj, **overrides)


def ideal_config() -> dict:
    return {"schema": SCHEMA_VERSION, "scheme": "Kyber512", "order": 1, "seed": 0,
            "fault": FaultProfile.ideal().to_json(),
            "campaign": {"beta": 20, "filter_pool": 13, "rejection_rate": 0.5, "ciphertexts": 60000},
            "solver": {}, "sweep": DEFAULT_SWEEP, "out": "out"}


def practical_config() -> dict:
    cfg = ideal_config()
    cfg["fault"] = FaultProfile.practical().to_json()
    cfg["campaign"] = {"beta": 180, "filter_pool": 13, "rejection_rate": 0.5, "ciphertexts": 70000}
    return cfg
