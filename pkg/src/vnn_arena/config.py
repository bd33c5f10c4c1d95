"""Strict TOML harness configuration.

Example::

    rules = "2021"
    time_bonus = true
    seed = 0
    store = "campaign/store.kv"
    reports = "campaign/reports"

    [tolerances]
    input = 1e-7
    output = 0.0

    [verifier]
    time_budget = 60.0
    [verifier.attack]
    steps = 30
    [verifier.bab]
    max_depth = 20

    [oracle]
    budget = 10.0

    [[tools]]
    name = "reference"
    run_command = ["vnn-arena", "verify"]

    [[benchmarks]]
    name = "desk"
    instances = "desk/instances.csv"

Relative paths resolve against the config file's directory. Unknown keys
anywhere are rejected.
"""

from __future__ import annotations

import shutil
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, MissingFile
from .refverify import AttackConfig, BabConfig, VerifierConfig
from .runner import ToolAdapter
from .scoring import RuleSet
from .witness import DEFAULT_TOL_IN, DEFAULT_TOL_OUT


@dataclass
class BenchmarkDecl:
    name: str
    instances: Path


@dataclass
class HarnessConfig:
    rules: RuleSet
    tol: tuple[float, float] = (DEFAULT_TOL_IN, DEFAULT_TOL_OUT)
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    workdir: Path | None = None
    tools: list[ToolAdapter] = field(default_factory=list)
    benchmarks: list[BenchmarkDecl] = field(default_factory=list)
    store: Path | None = None
    reports: Path | None = None
    oracle_budget: float | None = None
    seed: int = 0


_TOP = {"rules", "time_bonus", "seed", "workdir", "store", "reports", "tolerances", "verifier", "oracle",
        "tools", "benchmarks"}


def _reject_unknown(table: dict, allowed, where: str) -> None:
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key {extra[0]!r} (allowed: {', '.join(sorted(allowed))})")


def _typed(value, typ, where: str):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if typ is int and isinstance(value, bool) or not isinstance(value, typ):
        raise ConfigError(f"{where}: expected {typ.__name__}, got {type(value).__name__}")
    return value


def _dataclass_from(cls, table: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    _reject_unknown(table, known, where)
    kwargs = {}
    for k, v in table.items():
        default = getattr(cls(), k)
        kwargs[k] = _typed(v, type(default), f"{where}.{k}")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _command(value, where: str, base: Path) -> tuple[str, ...]:
    if isinstance(value, str):
        value = value.split()
    if not isinstance(value, list) or not value or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{where}: expected a non-empty string or list of strings")
    exe = value[0]
    if "/" in exe:
        path = (base / exe) if not Path(exe).is_absolute() else Path(exe)
        if not path.is_file():
            raise MissingFile(f"{where}: {path} does not exist")
        value = [str(path)] + value[1:]
    elif shutil.which(exe) is None:
        raise MissingFile(f"{where}: {exe!r} not found on PATH")
    return tuple(value)


def parse_config(text: str, base_dir=".") -> HarnessConfig:
    base = Path(base_dir)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    _reject_unknown(raw, _TOP, "config")
    try:
        rules = RuleSet.named(str(raw.get("rules", "2021")), bool(_typed(raw.get("time_bonus", True), bool,
                                                                            "time_bonus")))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    seed = _typed(raw.get("seed", 0), int, "seed")

    tol_tab = raw.get("tolerances", {})
    _reject_unknown(tol_tab, {"input", "output"}, "tolerances")
    tol = (_typed(tol_tab.get("input", DEFAULT_TOL_IN), float, "tolerances.input"),
           _typed(tol_tab.get("output", DEFAULT_TOL_OUT), float, "tolerances.output"))
    if tol[0] < 0 or tol[1] < 0:
        raise ConfigError("tolerances must be non-negative")

    ver = raw.get("verifier", {})
    _reject_unknown(ver, {"time_budget", "attack", "bab"}, "verifier")
    attack = _dataclass_from(AttackConfig, ver.get("attack", {}), "verifier.attack")
    bab = _dataclass_from(BabConfig, ver.get("bab", {}), "verifier.bab")
    try:
        verifier = VerifierConfig(attack, bab, _typed(ver.get("time_budget", 60.0), float, "verifier.time_budget"),
                                  seed)
    except ValueError as exc:
        raise ConfigError(f"verifier: {exc}") from None

    oracle = raw.get("oracle", {})
    _reject_unknown(oracle, {"budget"}, "oracle")
    oracle_budget = _typed(oracle["budget"], float, "oracle.budget") if "budget" in oracle else None

    tools = []
    for k, t in enumerate(raw.get("tools", [])):
        where = f"tools[{k}]"
        _reject_unknown(t, {"name", "run_command", "prepare_command", "overhead"}, where)
        if "name" not in t or "run_command" not in t:
            raise ConfigError(f"{where}: name and run_command are required")
        prep = _command(t["prepare_command"], f"{where}.prepare_command", base) if "prepare_command" in t else None
        overhead = _typed(t["overhead"], float, f"{where}.overhead") if "overhead" in t else None
        try:
            tools.append(ToolAdapter(_typed(t["name"], str, f"{where}.name"),
                                     _command(t["run_command"], f"{where}.run_command", base), prep, overhead))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if len({t.name for t in tools}) != len(tools):
        raise ConfigError("tool names must be unique")

    benches = []
    for k, b in enumerate(raw.get("benchmarks", [])):
        where = f"benchmarks[{k}]"
        _reject_unknown(b, {"name", "instances"}, where)
        if "name" not in b or "instances" not in b:
            raise ConfigError(f"{where}: name and instances are required")
        path = base / _typed(b["instances"], str, f"{where}.instances")
        if not path.is_file():
            raise MissingFile(f"{where}: {path} does not exist")
        benches.append(BenchmarkDecl(_typed(b["name"], str, f"{where}.name"), path))

    def opt_path(key):
        return base / _typed(raw[key], str, key) if key in raw else None

    return HarnessConfig(rules, tol, verifier, opt_path("workdir"), tools, benches, opt_path("store"),
                         opt_path("reports"), oracle_budget, seed)


def load_config(path) -> HarnessConfig:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"{path} does not exist")
    return parse_config(path.read_text(), path.parent)
