"""Campaign configuration: a TOML file validated into :class:`CampaignConfig`."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .codecs import MutationConfig
from .harness import ConfigurationError, Endpoint, TimeoutPolicy
from .protocols import PROFILES

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AdvisorSettings(_Section):
    backend: Literal["heuristic", "llm", "mock"] = "heuristic"
    # number of states to select; defaults to the protocol profile's choice
    select_count: Optional[int] = Field(None, ge=1)
    max_candidates: int = Field(32, ge=1)
    # optional protocol documentation file used to augment the candidate states
    documentation: Optional[str] = None
    # heuristic thresholds
    delete_failure_rate: float = Field(0.9, ge=0, le=1)
    delete_min_requests: int = Field(100, ge=1)
    add_overall_rate: float = Field(0.01, ge=0, le=1)
    # chat backend
    model: str = "gpt-4o-mini"
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = Field(0.5, ge=0, le=2)
    max_completion_tokens: int = Field(1024, ge=1)
    max_retries: int = Field(3, ge=0)
    # mock backend reply fixture (JSON list or template-id mapping)
    script: Optional[str] = None
    max_calls: Optional[int] = Field(None, ge=0)
    max_tokens: Optional[int] = Field(None, ge=0)


class MutationSettings(_Section):
    insert_probability: float = Field(0.1, ge=0, le=1)
    delete_probability: float = Field(0.1, ge=0, le=1)
    mutate_probability: float = Field(0.1, ge=0, le=1)
    max_mutations: int = Field(4, ge=0)
    max_insert: int = Field(8, ge=1)
    max_delete: int = Field(8, ge=1)
    max_overwrite: int = Field(4, ge=1)

    @field_validator("mutate_probability")
    @classmethod
    def _total(cls, v, info):
        total = v + info.data.get("insert_probability", 0) + info.data.get("delete_probability", 0)
        if total > 1 + 1e-9:
            raise ValueError("insert + delete + mutate probabilities must not exceed 1")
        return v

    def build(self) -> MutationConfig:
        return MutationConfig(**self.model_dump())


class TimeoutSettings(_Section):
    connect_s: float = Field(1.0, gt=0)
    read_s: float = Field(0.2, gt=0)
    probe_retries: int = Field(3, ge=0)
    probe_backoff_s: float = Field(0.25, ge=0)

    def build(self) -> TimeoutPolicy:
        return TimeoutPolicy(**self.model_dump())


class ModbusSettings(_Section):
    truncate_probability: float = Field(0.02, ge=0, le=1)
    unit_id: int = Field(1, ge=0, le=255)


class CampaignConfig(_Section):
    protocol: str = "mqtt"
    endpoint: str = "127.0.0.1:1883"
    batch_size: int = Field(20_000, ge=1)
    max_batches: int = Field(10, ge=1)
    restart_probability: float = Field(0.1, ge=0, le=1)
    seed: int = 0
    workers: int = Field(4, ge=1)
    stop_on_crash: bool = True
    # replay each crashing case serially to confirm it before reporting
    confirm_crashes: bool = True
    # how long to wait for a crashed target to come back when not stopping on crash
    recovery_wait_s: float = Field(10.0, ge=0)
    max_wall_time_s: float = Field(3600.0, gt=0)
    output_dir: str = "campaign-out"
    advisor: AdvisorSettings = Field(default_factory=AdvisorSettings)
    mutation: MutationSettings = Field(default_factory=MutationSettings)
    timeouts: TimeoutSettings = Field(default_factory=TimeoutSettings)
    modbus: ModbusSettings = Field(default_factory=ModbusSettings)

    @field_validator("protocol")
    @classmethod
    def _protocol(cls, v: str) -> str:
        v = v.lower()
        if v not in PROFILES:
            raise ValueError(f"unsupported protocol {v!r}; expected one of {sorted(PROFILES)}")
        return v

    @field_validator("endpoint")
    @classmethod
    def _endpoint(cls, v: str) -> str:
        try:
            Endpoint.parse(v)
        except ConfigurationError as exc:
            raise ValueError(str(exc)) from None
        return v

    def parsed_endpoint(self) -> Endpoint:
        return Endpoint.parse(self.endpoint)


def load_config(path: str | Path, **overrides) -> CampaignConfig:
    """Read a TOML config; keyword overrides (``None`` ignored) win over file values."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"invalid TOML in {path}: {exc}") from exc
    data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data)


def config_from_dict(data: dict) -> CampaignConfig:
    try:
        return CampaignConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid campaign config:\n{exc}") from exc


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return repr(v)


def dump_toml(config: CampaignConfig) -> str:
    """Render a config as TOML (the stdlib reads TOML but cannot write it)."""
    data = config.model_dump()
    lines, tables = [], []
    for key, value in data.items():
        if isinstance(value, dict):
            tables.append((key, value))
        elif value is not None:
            lines.append(f"{key} = {_toml_value(value)}")
    for name, table in tables:
        lines.append("")
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_toml_value(v)}" for k, v in table.items() if v is not None)
    return "\n".join(lines) + "\n"
