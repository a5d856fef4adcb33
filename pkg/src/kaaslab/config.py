"""Experiment configuration: one YAML file, every section optional.

    seed: 0
    env:        EnvParams fields, power_model: {alpha, beta, gamma}
    bins:       {fps: [...], psnr: [...], power: [...]}   ascending edges
    ladder:     {threads: [...], freq: [...], qp: [...]}
    explore:    {min_visits: 10, budget: 2000000}
    online:     Hyperparams fields for pi^R's online run
    offline:    Hyperparams fields for table playback
    rewards:    {policy_name: [{metric, values, coefficient}, ...]}
    workload:   {intervals, fractions, strategies, n_clients, combinations, repeats}
    paths:      {table, kb, out}

Unknown keys are rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .env_sim import EnvParams, PowerModelParams
from .harness import FRACTIONS, STRATEGIES
from .kaas import PROVISION_ONLINE
from .learning import OFFLINE_HYPERPARAMS, Hyperparams
from .mdp_core import KnobLadder, StateSpace
from .rewards import PolicyRecipe, builtin_recipes, recipe_from_config
from .scheduler import Strategy


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadMatrix:
    intervals: tuple[float, ...] = (10.0,)
    fractions: tuple[float, ...] = FRACTIONS
    strategies: tuple[Strategy, ...] = STRATEGIES
    n_clients: int = 10
    combinations: int = 5
    repeats: int = 3


@dataclass(frozen=True)
class Paths:
    table: str = "table.json"
    kb: str = "kb.zip"
    out: str = "."


@dataclass(frozen=True)
class Config:
    seed: int = 0
    env: EnvParams = field(default_factory=EnvParams)
    space: StateSpace = field(default_factory=StateSpace.default)
    ladder: KnobLadder = field(default_factory=KnobLadder)
    min_visits: int = 10
    explore_budget: int = 2_000_000
    online: Hyperparams = PROVISION_ONLINE
    offline: Hyperparams = OFFLINE_HYPERPARAMS
    reward_terms: dict = field(default_factory=dict)
    workload: WorkloadMatrix = field(default_factory=WorkloadMatrix)
    paths: Paths = field(default_factory=Paths)

    def recipes(self) -> dict[str, PolicyRecipe]:
        out = builtin_recipes(self.space)
        for name, terms in self.reward_terms.items():
            out[name] = recipe_from_config(name, terms, self.space)
        return out


_SECTIONS = {"seed", "env", "bins", "ladder", "explore", "online", "offline", "rewards",
             "workload", "paths"}


def _check_keys(section: str, given: dict, allowed) -> None:
    extra = set(given) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(extra))}")


def _dc_update(section: str, base, given: dict):
    if not isinstance(given, dict):
        raise ConfigError(f"{section} must be a mapping")
    _check_keys(section, given, [f.name for f in fields(base)])
    try:
        return replace(base, **given)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def from_dict(doc: dict | None) -> Config:
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys("config", doc, _SECTIONS)
    cfg = Config()
    kw = {}
    if "seed" in doc:
        kw["seed"] = int(doc["seed"])
    if "env" in doc:
        env = dict(doc["env"])
        pm = env.pop("power_model", None)
        params = _dc_update("env", cfg.env, env)
        if pm is not None:
            params = replace(params, power_model=_dc_update("env.power_model",
                                                            PowerModelParams(), pm))
        kw["env"] = params
    if "bins" in doc:
        b = doc["bins"]
        _check_keys("bins", b, ("fps", "psnr", "power"))
        d = cfg.space.to_dict() | b
        try:
            kw["space"] = StateSpace.from_edges(d["fps"], d["psnr"], d["power"])
        except ValueError as exc:
            raise ConfigError(f"bins: {exc}") from None
    if "ladder" in doc:
        lad = doc["ladder"]
        _check_keys("ladder", lad, ("threads", "freq", "qp"))
        try:
            kw["ladder"] = KnobLadder(**(cfg.ladder.to_dict() | lad))
        except ValueError as exc:
            raise ConfigError(f"ladder: {exc}") from None
    if "explore" in doc:
        ex = doc["explore"]
        _check_keys("explore", ex, ("min_visits", "budget"))
        kw["min_visits"] = int(ex.get("min_visits", cfg.min_visits))
        kw["explore_budget"] = int(ex.get("budget", cfg.explore_budget))
    for name in ("online", "offline"):
        if name in doc:
            kw[name] = _dc_update(name, getattr(cfg, name), doc[name])
    if "rewards" in doc:
        if not isinstance(doc["rewards"], dict):
            raise ConfigError("rewards must map policy names to term lists")
        kw["reward_terms"] = dict(doc["rewards"])
    if "workload" in doc:
        w = dict(doc["workload"])
        for key in ("intervals", "fractions"):
            if key in w:
                w[key] = tuple(float(v) for v in w[key])
        if "strategies" in w:
            try:
                w["strategies"] = tuple(Strategy(s) for s in w["strategies"])
            except ValueError as exc:
                raise ConfigError(f"workload: {exc}") from None
        kw["workload"] = _dc_update("workload", cfg.workload, w)
    if "paths" in doc:
        kw["paths"] = _dc_update("paths", cfg.paths, doc["paths"])
    out = replace(cfg, **kw)
    try:
        out.recipes()
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"rewards: {exc}") from None
    return out


def load(path) -> Config:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return from_dict(doc)
