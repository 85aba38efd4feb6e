"""Run configuration: a YAML file plus dotted ``key=value`` overrides."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from .agent import AgentConfig
from .reward import RewardConfig
from .topology import ConfigError, ScenarioConfig, curriculum_stage
from .trainer import TrainConfig

SECTIONS = ("scenario", "train", "agent", "reward", "planner", "eval")


@dataclass
class EvalSettings:
    episodes: int = 50
    seed: int = 2024

    def __post_init__(self) -> None:
        if self.episodes < 1:
            raise ConfigError("eval.episodes must be >= 1")


@dataclass
class RunConfig:
    scenario: ScenarioConfig
    train: TrainConfig
    agent: AgentConfig
    reward: RewardConfig
    planner: dict[str, Any] = field(default_factory=lambda: {"backend": "scripted"})
    eval: EvalSettings = field(default_factory=EvalSettings)
    raw: dict[str, Any] = field(default_factory=dict)


def _dataclass_from(cls, data: dict[str, Any], section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def scenario_from(data: Optional[dict[str, Any]]) -> ScenarioConfig:
    """``{stage: k, seed: s}`` picks a curriculum stage; any other keys build a ScenarioConfig."""
    data = dict(data or {})
    if "stage" in data:
        stage = data.pop("stage")
        seed = data.pop("seed", 0)
        if data:
            raise ConfigError(f"'stage' cannot be combined with {sorted(data)}")
        return curriculum_stage(int(stage), seed=int(seed))
    try:
        return ScenarioConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def apply_overrides(raw: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = yaml.safe_load(value)
    return out


def build(raw: dict[str, Any]) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    planner = dict(raw.get("planner") or {"backend": "scripted"})
    if planner.get("backend", "scripted") not in ("scripted", "remote"):
        raise ConfigError(f"unknown planner backend {planner.get('backend')!r}")
    return RunConfig(
        scenario=scenario_from(raw.get("scenario")),
        train=_dataclass_from(TrainConfig, raw.get("train") or {}, "train"),
        agent=_dataclass_from(AgentConfig, raw.get("agent") or {}, "agent"),
        reward=_dataclass_from(RewardConfig, raw.get("reward") or {}, "reward"),
        planner=planner,
        eval=_dataclass_from(EvalSettings, raw.get("eval") or {}, "eval"),
        raw=raw,
    )


def load(path: Optional[str | Path], overrides: Sequence[str] = ()) -> RunConfig:
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return build(apply_overrides(raw, overrides))
