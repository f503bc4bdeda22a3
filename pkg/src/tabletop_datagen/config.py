"""Pipeline configuration: dataclasses with a canonical JSON form and hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import IoError, ValidationError
from .sim import DELTA_POS, FailureModel
from .staging import SceneParams
from .verify import CRITIC_KINDS, MODES

ABORT_POLICIES = ("resample_scene", "reset_same_scene")
PLANNER_KINDS = ("rule_engine", "remote")


@dataclass(frozen=True)
class CriticConfig:
    kind: str = "oracle"
    alpha: float = 0.0
    beta: float = 0.0
    seed_stream: str = "critic"
    endpoint: str | None = None
    timeout: float = 30.0
    retries: int = 2

    def __post_init__(self):
        if self.kind not in CRITIC_KINDS:
            raise ValueError(f"unknown critic kind {self.kind!r}")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("critic alpha and beta must lie in [0, 1]")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("a remote critic needs an endpoint")


@dataclass(frozen=True)
class PlannerConfig:
    kind: str = "rule_engine"
    endpoint: str | None = None
    timeout: float = 30.0
    retries: int = 2

    def __post_init__(self):
        if self.kind not in PLANNER_KINDS:
            raise ValueError(f"unknown planner kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("a remote planner needs an endpoint")


@dataclass(frozen=True)
class GateConfig:
    """When enabled, each task template must pass the robustness gate before use."""

    enabled: bool = False
    trials: int = 10
    threshold: float = 0.5

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("gate trials must be >= 1")
        if not 0.0 <= self.threshold < 1.0:
            raise ValueError("gate threshold must lie in [0, 1)")


@dataclass(frozen=True)
class PipelineConfig:
    master_seed: int = 0
    mode: str = "vcage"
    critic: CriticConfig = field(default_factory=CriticConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    tasks: tuple[str, ...] = ("place_mouse_pad",)
    failure: FailureModel = field(default_factory=FailureModel)
    gate: GateConfig = field(default_factory=GateConfig)
    scene: SceneParams = field(default_factory=SceneParams)
    abort_policy: str = "resample_scene"
    max_resets: int = 3
    n_target: int = 100
    episode_cap: int | None = None
    delta_pos: float = DELTA_POS
    catalog: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.tasks:
            raise ValueError("at least one task is required")
        if self.abort_policy not in ABORT_POLICIES:
            raise ValueError(f"unknown abort policy {self.abort_policy!r}")
        if self.max_resets < 0:
            raise ValueError("max_resets must be >= 0")
        if self.n_target < 1:
            raise ValueError("n_target must be >= 1")
        if self.episode_cap is not None and self.episode_cap < 1:
            raise ValueError("episode_cap must be >= 1")
        if not self.delta_pos > 0:
            raise ValueError("delta_pos must be positive")

    @property
    def cap(self) -> int:
        return self.episode_cap if self.episode_cap is not None else 50 * self.n_target

    def with_(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "mode": self.mode,
            "critic": _plain(self.critic),
            "planner": _plain(self.planner),
            "tasks": list(self.tasks),
            "failure": self.failure.to_dict(),
            "gate": _plain(self.gate),
            "scene": self.scene.to_dict(),
            "abort_policy": self.abort_policy,
            "max_resets": self.max_resets,
            "n_target": self.n_target,
            "episode_cap": self.episode_cap,
            "delta_pos": self.delta_pos,
            "catalog": self.catalog,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        d = dict(d)
        try:
            for key, sub in (("critic", CriticConfig), ("planner", PlannerConfig), ("gate", GateConfig)):
                if key in d:
                    d[key] = _build(sub, d[key], key)
            if "failure" in d:
                d["failure"] = _build(FailureModel, d["failure"], "failure")
            if "scene" in d:
                d["scene"] = SceneParams.from_dict(d["scene"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"invalid config: {exc}") from exc

    def content_dict(self) -> dict:
        """The settings that determine dataset content.

        Transport details (endpoints, timeouts, retries) are dropped, and a
        critic is recorded by its verdict model only: ``noisy`` keeps its flip
        rates, oracle and remote critics both appear as ``oracle``. A remote
        service answering with ground truth therefore produces the same file
        as the in-process oracle.
        """
        d = self.to_dict()
        c = self.critic
        d["critic"] = (
            {"kind": "noisy", "alpha": c.alpha, "beta": c.beta, "seed_stream": c.seed_stream}
            if c.kind == "noisy"
            else {"kind": "oracle"}
        )
        d["planner"] = {"kind": self.planner.kind}
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.content_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _plain(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _build(cls, d: Mapping, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValidationError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**d)


def load_config(path: str | Path) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON (line {exc.lineno}): {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"config {path} must hold a JSON object")
    return PipelineConfig.from_dict(data)
