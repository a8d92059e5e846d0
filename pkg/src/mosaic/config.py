"""Scenario file schema and override handling."""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

SCHEMA_VERSION = 1
FILTERS = ("phd", "cphd")
RULES = ("local", "gci", "aa")


class ConfigError(ValueError):
    """Invalid scenario configuration (CLI exit status 2)."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NodeConfig(_Strict):
    id: int
    position: tuple[float, float]
    fov_radius: float = Field(gt=0)
    sigma_r: float = Field(5.0, gt=0)
    sigma_theta: float = Field(1.0, gt=0, description="bearing noise std, degrees")
    pd0: float = Field(0.95, gt=0, le=1)


class NetworkConfig(_Strict):
    nodes: list[NodeConfig] = Field(min_length=1)
    arcs: list[tuple[int, int]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _arcs_reference_nodes(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        for a, b in self.arcs:
            if a not in ids or b not in ids:
                raise ValueError(f"arc ({a}, {b}) references an unknown node")
            if a == b:
                raise ValueError(f"arc ({a}, {b}) is a self loop")
        return self


class MotionConfig(_Strict):
    Ts: float = Field(1.0, gt=0)
    sigma_w: float = Field(5.0, ge=0)
    ps: float = Field(0.95, gt=0, le=1)
    truth_sigma_w: Optional[float] = Field(None, ge=0, description="process noise for ground truth; defaults to sigma_w")


class ClutterConfig(_Strict):
    lambda_c: float = Field(15.0, ge=0)


class BirthConfig(_Strict):
    rate: float = Field(0.15, ge=0)
    Pb_diag: tuple[float, float, float, float] = (50.0, 20.0, 50.0, 20.0)

    @field_validator("Pb_diag")
    @classmethod
    def _positive(cls, v):
        if any(x <= 0 for x in v):
            raise ValueError("birth covariance must be positive definite")
        return v


class TargetConfig(_Strict):
    initial_state: tuple[float, float, float, float]
    birth_scan: int = Field(0, ge=0)
    death_scan: Optional[int] = None

    @model_validator(mode="after")
    def _window(self):
        if self.death_scan is not None and self.death_scan <= self.birth_scan:
            raise ValueError("death_scan must come after birth_scan")
        return self


class RunConfig(_Strict):
    scans: int = Field(100, ge=1)
    mc_runs: int = Field(100, ge=1)
    consensus_steps: int = Field(3, ge=0)
    rule: Literal["local", "gci", "aa"] = "gci"
    filter: Literal["phd", "cphd"] = "cphd"
    rho: float = Field(20.0, gt=0)
    omega: float = Field(0.5, gt=0, lt=1)
    seed: int = Field(0, ge=0, lt=2**64)
    methods: Optional[list[str]] = None
    n_max: int = Field(20, ge=1)
    prune_threshold: float = Field(1e-5, ge=0)
    merge_threshold: float = Field(4.0, ge=0)
    max_components: int = Field(40, ge=1)
    ospa_c: float = Field(600.0, gt=0)
    ospa_p: float = Field(1.0, ge=1)

    @field_validator("methods", mode="before")
    @classmethod
    def _split(cls, v):
        if isinstance(v, str):
            v = [s.strip() for s in v.split(",") if s.strip()]
        return v

    @field_validator("methods")
    @classmethod
    def _known(cls, v):
        if v is None:
            return v
        if not v:
            raise ValueError("methods list is empty")
        for m in v:
            parse_method(m)
        if len(set(v)) != len(v):
            raise ValueError("duplicate method")
        return v

    def method_list(self) -> list[str]:
        return list(self.methods) if self.methods else [f"{self.filter}-{self.rule}"]


class ScenarioConfig(_Strict):
    version: int = SCHEMA_VERSION
    network: NetworkConfig
    motion: MotionConfig = MotionConfig()
    clutter: ClutterConfig = ClutterConfig()
    birth: BirthConfig = BirthConfig()
    targets: list[TargetConfig] = Field(default_factory=list)
    run: RunConfig = RunConfig()

    @model_validator(mode="after")
    def _sanity(self):
        if self.version != SCHEMA_VERSION:
            raise ValueError(f"unsupported scenario version {self.version}")
        for k, t in enumerate(self.targets):
            if t.birth_scan >= self.run.scans:
                raise ValueError(f"targets.{k}: birth_scan beyond the scan horizon")
            x, _, y, _ = t.initial_state
            inside = any(
                np.hypot(x - n.position[0], y - n.position[1]) <= n.fov_radius for n in self.network.nodes
            )
            if not inside:
                raise ValueError(f"targets.{k}: initial position lies outside every field of view")
        return self


def parse_method(name: str) -> tuple[str, str]:
    parts = name.lower().split("-")
    if len(parts) != 2 or parts[0] not in FILTERS or parts[1] not in RULES:
        raise ValueError(f"unknown method {name!r}; expected '<phd|cphd>-<local|gci|aa>'")
    return parts[0], parts[1]


# ---------------------------------------------------------------------------


def _format_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: dict, key: str, value) -> dict:
    """Set a dotted ``key`` (list indices allowed) in a raw config dict.

    ``pd0`` is an alias that sets every node's detection probability.
    """
    out = copy.deepcopy(raw)
    if key == "pd0":
        for node in out.get("network", {}).get("nodes", []):
            node["pd0"] = value
        return out
    if key == "rho":
        key = "run.rho"
    parts = key.split(".")
    cur = out
    for part in parts[:-1]:
        if isinstance(cur, list):
            cur = cur[int(part)]
        else:
            cur = cur.setdefault(part, {})
    last = parts[-1]
    if isinstance(cur, list):
        cur[int(last)] = value
    else:
        cur[last] = value
    return out


def parse_overrides(items) -> list[tuple[str, object]]:
    out = []
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        k, v = item.split("=", 1)
        out.append((k.strip(), parse_value(v.strip())))
    return out


def load_raw(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return raw


def build_config(raw: dict, overrides=()) -> ScenarioConfig:
    for k, v in overrides:
        try:
            raw = apply_override(raw, k, v)
        except (KeyError, IndexError, ValueError, TypeError) as exc:
            raise ConfigError(f"override {k}: cannot apply ({exc})") from exc
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None


def load_config(path, overrides=()) -> ScenarioConfig:
    return build_config(load_raw(path), overrides)


def default_scenario_path() -> Path:
    return Path(str(resources.files("mosaic") / "data" / "default_scenario.json"))


def default_config(**run_overrides) -> ScenarioConfig:
    raw = load_raw(default_scenario_path())
    return build_config(raw, [(f"run.{k}", v) for k, v in run_overrides.items()])


def config_hash(cfg: ScenarioConfig) -> str:
    canon = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
