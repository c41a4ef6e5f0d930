"""Run configuration: one JSON document, validated section by section."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
from django.core.exceptions import ValidationError

from .agent import AgentConfig
from .choices import AttackChannel, RewardKind, TerminationMode
from .constants import (
    AGENT_STEP,
    CLASS_QUOTA,
    CROP_LENGTH_RANGE,
    DEFAULT_SEEDS,
    EPISODE_LIMIT,
    FDI_TRAINING_BOUNDS,
    INTEGRATION_DT,
    REWARD_DEFAULTS,
    SPLIT_FRACTIONS,
)
from .detectors import DetectorConfig
from .environment import EnvConfig, RewardConfig
from .grid import SystemParams
from .loads import LoadProcessConfig
from .protection import RelaySettings

SECTIONS = ("system", "attack", "relay", "load", "agent", "dataset", "detector", "seeds", "output_dir")


@dataclass(frozen=True)
class AttackSettings:
    channel: str = AttackChannel.FREQ_MEASUREMENT
    bounds: tuple[float, float] = FDI_TRAINING_BOUNDS
    discrete_switching: bool = False
    switch_power: float = 0.0
    reward: str = RewardKind.FDI
    termination: str = TerminationMode.SAFE_SET
    episode_limit: float = EPISODE_LIMIT
    agent_step: float = AGENT_STEP
    background_load: bool = False
    warmup: float = 0.0
    dt: float = INTEGRATION_DT
    rocof_scale: float = REWARD_DEFAULTS["rocof_scale"]
    freq_scale_fdi: float = REWARD_DEFAULTS["freq_scale_fdi"]
    freq_scale_switch: float = REWARD_DEFAULTS["freq_scale_switch"]
    trip_bonus: float = REWARD_DEFAULTS["trip_bonus"]
    uf_of_penalty_fdi: float = REWARD_DEFAULTS["uf_of_penalty_fdi"]

    def clean(self) -> None:
        errors = {}
        if self.channel not in AttackChannel.values:
            errors["channel"] = f"Choose one of {', '.join(AttackChannel.values)}."
        if self.reward not in RewardKind.values:
            errors["reward"] = f"Choose one of {', '.join(RewardKind.values)}."
        if self.termination not in TerminationMode.values:
            errors["termination"] = f"Choose one of {', '.join(TerminationMode.values)}."
        if len(self.bounds) != 2:
            errors["bounds"] = "Bounds are a [lo, hi] pair."
        if errors:
            raise ValidationError(errors)


@dataclass(frozen=True)
class DatasetSettings:
    quota: int = CLASS_QUOTA
    fractions: tuple[float, float, float] = SPLIT_FRACTIONS
    length_range: tuple[int, int] = CROP_LENGTH_RANGE
    normal_duration: float = 3600.0
    attack_episodes: int = 3000
    sources: tuple = ({"channel": AttackChannel.FREQ_MEASUREMENT},)

    def clean(self) -> None:
        errors = {}
        if self.quota < 1:
            errors["quota"] = "Quota must be at least one record per class."
        if not self.normal_duration > 0:
            errors["normal_duration"] = "Normal-operation duration must be positive."
        if self.attack_episodes < 1:
            errors["attack_episodes"] = "Train at least one attack episode per source."
        if len(self.length_range) != 2 or not 2 <= self.length_range[0] <= self.length_range[1]:
            errors["length_range"] = "Crop lengths need 2 <= lo <= hi."
        if errors:
            raise ValidationError(errors)


def _coerce(cls, section: str, data: Any):
    """Build a settings dataclass from a JSON object, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ValidationError({section: "Expected a JSON object."})
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ValidationError({section: f"Unknown keys: {', '.join(unknown)}."})
    values = {}
    for key, value in data.items():
        default = known[key].default
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ValidationError({f"{section}.{key}": "Expected true or false."})
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
                raise ValidationError({f"{section}.{key}": "Expected an integer."})
            value = int(value)
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError({f"{section}.{key}": "Expected a number."})
            value = float(value)
        values[key] = value
    return cls(**values)


def _system_from(data: Any) -> SystemParams:
    if isinstance(data, str):
        return SystemParams.preset(data)
    if not isinstance(data, dict):
        raise ValidationError({"system": "Use a preset name or an object of parameters."})
    data = dict(data)
    preset = data.pop("preset", None)
    base = SystemParams.preset(preset).to_dict() if preset else {}
    base.update(data)
    params = SystemParams.from_dict(base)
    params.clean()
    return params


@dataclass(frozen=True)
class RunConfig:
    system: SystemParams = field(default_factory=lambda: SystemParams.preset("MG2"))
    attack: AttackSettings = field(default_factory=AttackSettings)
    relay: RelaySettings = field(default_factory=RelaySettings)
    load: LoadProcessConfig = field(default_factory=LoadProcessConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    seeds: dict = field(default_factory=lambda: dict(DEFAULT_SEEDS))
    output_dir: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ValidationError({"config": "The run configuration must be a JSON object."})
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ValidationError({"config": f"Unknown sections: {', '.join(unknown)}."})
        seeds = dict(DEFAULT_SEEDS)
        raw_seeds = data.get("seeds", {})
        if not isinstance(raw_seeds, dict):
            raise ValidationError({"seeds": "Expected a JSON object."})
        for name, value in raw_seeds.items():
            if name not in DEFAULT_SEEDS:
                raise ValidationError({"seeds": f"Unknown seed '{name}'."})
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise ValidationError({f"seeds.{name}": "Seeds are explicit non-negative integers."})
            seeds[name] = value
        config = cls(
            system=_system_from(data.get("system", "MG2")),
            attack=_coerce(AttackSettings, "attack", data.get("attack", {})),
            relay=_coerce(RelaySettings, "relay", data.get("relay", {})),
            load=_coerce(LoadProcessConfig, "load", data.get("load", {})),
            agent=AgentConfig.from_dict(data.get("agent", {})),
            dataset=_coerce(DatasetSettings, "dataset", data.get("dataset", {})),
            detector=DetectorConfig.from_dict(data.get("detector", {})),
            seeds=seeds,
            output_dir=data.get("output_dir"),
        )
        config.clean()
        return config

    @classmethod
    def load(cls, path: Path | None, overrides: list[str] | None = None) -> "RunConfig":
        data: dict = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except FileNotFoundError as exc:
                raise ValidationError({"config": f"No configuration file at {path}."}) from exc
            except json.JSONDecodeError as exc:
                raise ValidationError({"config": f"{path} is not valid JSON: {exc.msg} (line {exc.lineno})."}) from exc
        return cls.from_dict(apply_overrides(data, overrides or []))

    def clean(self) -> None:
        self.system.clean()
        self.attack.clean()
        self.relay.clean(self.system.base_frequency)
        self.load.clean()
        self.agent.clean()
        self.dataset.clean()
        self.detector.clean()

    def to_dict(self) -> dict:
        return {
            "system": self.system.to_dict(),
            "attack": _jsonable(asdict(self.attack)),
            "relay": self.relay.to_dict(),
            "load": self.load.to_dict(),
            "agent": self.agent.to_dict(),
            "dataset": _jsonable(asdict(self.dataset)),
            "detector": self.detector.to_dict(),
            "seeds": dict(self.seeds),
            "output_dir": self.output_dir,
        }

    def stage_seed(self, name: str) -> int:
        """Seed for one pipeline stage, derived from the base seed and the stage seed."""
        if name not in self.seeds:
            raise ValidationError({"seeds": f"Unknown seed '{name}'."})
        return int(np.random.SeedSequence([self.seeds["base"], self.seeds[name]]).generate_state(1)[0])

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def env_config(self, **changes) -> EnvConfig:
        """Environment for the configured attack, with per-call field changes."""
        attack = self.attack
        if changes:
            attack = _coerce(AttackSettings, "attack", {**_jsonable(asdict(self.attack)), **changes})
        attack.clean()
        return EnvConfig(
            params=self.system,
            channel=AttackChannel(attack.channel),
            bounds=tuple(attack.bounds),
            discrete_switching=attack.discrete_switching,
            switch_power=attack.switch_power,
            episode_limit=attack.episode_limit,
            agent_step=attack.agent_step,
            reward=RewardConfig(
                rocof_scale=attack.rocof_scale,
                freq_scale_fdi=attack.freq_scale_fdi,
                freq_scale_switch=attack.freq_scale_switch,
                trip_bonus=attack.trip_bonus,
                uf_of_penalty_fdi=attack.uf_of_penalty_fdi,
            ),
            reward_kind=RewardKind(attack.reward),
            termination=TerminationMode(attack.termination),
            relay=self.relay,
            background_load=attack.background_load,
            load=self.load,
            warmup=attack.warmup,
            dt=attack.dt,
        )


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``section.field=value`` assignments; values are JSON, falling back to strings."""
    data = copy.deepcopy(data)
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep or not key:
            raise ValidationError({"set": f"Expected section.field=value, got '{item}'."})
        value = _parse_value(text)
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            raise ValidationError({"set": f"Unknown section '{section}'."})
        if not name:
            data[section] = value
            continue
        target = data.get(section)
        if section == "system" and isinstance(target, str):
            target = {"preset": target}
        if not isinstance(target, dict):
            target = {}
        target[name] = value
        data[section] = target
    return data


def _json_type(value) -> str:
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    return "string"


def _schema_for(cls) -> dict:
    properties = {}
    for f in fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else None
        if isinstance(default, tuple):
            properties[f.name] = {"type": "array"}
        elif default is None:
            properties[f.name] = {"type": ["number", "null"]}
        else:
            properties[f.name] = {"type": _json_type(default)}
        if isinstance(default, (int, float, str)):
            properties[f.name]["default"] = str(default) if isinstance(default, str) else default
    return {"type": "object", "properties": properties, "additionalProperties": False}


def json_schema() -> dict:
    """JSON schema of the run configuration document."""
    system = _schema_for(SystemParams)
    system["properties"]["preset"] = {"type": "string", "enum": ["MG1", "MG2", "MG3"]}
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "Workbench run configuration",
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "system": {"oneOf": [{"type": "string", "enum": ["MG1", "MG2", "MG3"]}, system]},
            "attack": _schema_for(AttackSettings),
            "relay": _schema_for(RelaySettings),
            "load": _schema_for(LoadProcessConfig),
            "agent": _schema_for(AgentConfig),
            "dataset": _schema_for(DatasetSettings),
            "detector": _schema_for(DetectorConfig),
            "seeds": {
                "type": "object",
                "properties": {name: {"type": "integer", "minimum": 0} for name in DEFAULT_SEEDS},
                "additionalProperties": False,
            },
            "output_dir": {"type": ["string", "null"]},
        },
    }
