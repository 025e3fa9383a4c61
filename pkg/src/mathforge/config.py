"""Run configuration: YAML file -> typed config, defaults pinned to the
experiment protocol (20 rollouts, 30 steps, 3 solver attempts, 30-minute
wall timeout, temperature 0)."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError
from .gateway import ProviderProfile
from .sandbox.protocol import DEFAULT_WHITELIST

CONFIG_ENV_VAR = "MATHFORGE_CONFIG"


@dataclass(frozen=True)
class SandboxConfig:
    executor_cmd: tuple[str, ...] = ()  # empty -> built-in stub executor
    pool_size: int = 1
    whitelist: tuple[str, ...] = DEFAULT_WHITELIST
    per_call_timeout_ms: int = 120000


@dataclass(frozen=True)
class EvalConfig:
    max_attempts: int = 3
    wall_timeout_min: int = 30
    solved_threshold: float = 0.5


@dataclass(frozen=True)
class FixtureConfig:
    mode: str = "live"  # live | record | replay
    path: Optional[str] = None  # default: <out_dir>/fixtures.jsonl


@dataclass(frozen=True)
class RunConfig:
    rollout_budget: int = 20
    max_steps: int = 30
    parallelism: int = 1
    difficulty_accept_min: int = 3
    providers: dict[str, ProviderProfile] = field(default_factory=dict)
    evolver: str = ""
    solvability_gate: str = ""
    difficulty_gate: str = ""
    judge: str = ""
    solvers: tuple[str, ...] = ()
    demonstrations_path: Optional[str] = None
    sandbox: SandboxConfig = field(default_factory=SandboxConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    fixture: FixtureConfig = field(default_factory=FixtureConfig)
    raw_text: str = ""  # byte-identical snapshot of the loaded file

    def __post_init__(self) -> None:
        if self.rollout_budget < 1:
            raise ConfigError("rollout_budget must be >= 1")
        if not 1 <= self.difficulty_accept_min <= 5:
            raise ConfigError("difficulty_accept_min must lie in [1,5]")
        if self.eval.max_attempts < 1:
            raise ConfigError("eval.max_attempts must be >= 1")

    def profile(self, name: str) -> ProviderProfile:
        try:
            return self.providers[name]
        except KeyError:
            raise ConfigError(f"no provider profile named {name!r}") from None


def _parse_provider(name: str, raw: dict) -> ProviderProfile:
    try:
        return ProviderProfile(
            name=name,
            base_url=raw.get("base_url", ""),
            model=raw["model"],
            api_key_env=raw.get("api_key_env", ""),
            max_tokens=raw.get("max_tokens"),
            timeout_s=float(raw.get("timeout_s", 120.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"provider {name!r} missing key {exc}") from exc


def parse_config(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")

    providers = {
        name: _parse_provider(name, prof)
        for name, prof in (raw.get("providers") or {}).items()
    }
    sandbox_raw = raw.get("sandbox") or {}
    eval_raw = raw.get("eval") or {}
    fixture_raw = raw.get("fixture") or {}
    return RunConfig(
        rollout_budget=int(raw.get("rollout_budget", 20)),
        max_steps=int(raw.get("max_steps", 30)),
        parallelism=int(raw.get("parallelism", 1)),
        difficulty_accept_min=int(raw.get("difficulty_accept_min", 3)),
        providers=providers,
        evolver=raw.get("evolver", ""),
        solvability_gate=raw.get("solvability_gate", raw.get("evolver", "")),
        difficulty_gate=raw.get("difficulty_gate", raw.get("evolver", "")),
        judge=raw.get("judge", ""),
        solvers=tuple(raw.get("solvers") or ()),
        demonstrations_path=raw.get("demonstrations_path"),
        sandbox=SandboxConfig(
            executor_cmd=tuple(sandbox_raw.get("executor_cmd") or ()),
            pool_size=int(sandbox_raw.get("pool_size", 1)),
            whitelist=tuple(sandbox_raw.get("whitelist") or DEFAULT_WHITELIST),
            per_call_timeout_ms=int(sandbox_raw.get("per_call_timeout_ms", 120000)),
        ),
        eval=EvalConfig(
            max_attempts=int(eval_raw.get("max_attempts", 3)),
            wall_timeout_min=int(eval_raw.get("wall_timeout_min", 30)),
            solved_threshold=float(eval_raw.get("solved_threshold", 0.5)),
        ),
        fixture=FixtureConfig(
            mode=fixture_raw.get("mode", "live"),
            path=fixture_raw.get("path"),
        ),
        raw_text=text,
    )


def load_config(path: Optional[str]) -> RunConfig:
    resolved = path or os.environ.get(CONFIG_ENV_VAR)
    if not resolved:
        raise ConfigError(
            f"no config path given and {CONFIG_ENV_VAR} is unset"
        )
    try:
        text = Path(resolved).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {resolved!r}: {exc}") from exc
    return parse_config(text)
