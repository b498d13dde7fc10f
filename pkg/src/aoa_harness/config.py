"""Run configuration: file loading, CLI overrides, and a stable hash."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .arena import ArenaConfig
from .errors import SchemaError
from .reward import RewardWeights

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class RetryConfig:
    max_attempts: int = 3
    base_delay: float = 0.5
    jitter: float = 0.1
    max_delay: float = 30.0
    rate_per_sec: float | None = None


@dataclass(frozen=True)
class RunConfig:
    endpoint: str = "scripted"
    model: str = "default"
    models: dict = field(default_factory=dict)  # alias -> provider model name
    script: str | None = None
    parallel: int = 1
    temperature: float = 0.0
    retry: RetryConfig = field(default_factory=RetryConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)
    arena: ArenaConfig = field(default_factory=ArenaConfig)
    out_dir: str = "."
    seed: int = 0

    def __post_init__(self):
        if self.parallel < 1:
            raise SchemaError("parallel must be >= 1")

    def resolve_model(self, alias: str | None = None) -> str:
        alias = alias or self.model
        return self.models.get(alias, alias)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arena"] = self.arena.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown config keys: {', '.join(sorted(unknown))}")
        d = dict(d)
        try:
            if "retry" in d:
                d["retry"] = RetryConfig(**d["retry"])
            if "weights" in d:
                w = d["weights"]
                d["weights"] = RewardWeights(**w) if isinstance(w, dict) else RewardWeights(*w)
            if "arena" in d:
                d["arena"] = ArenaConfig.from_dict(d["arena"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"invalid config: {exc}") from None

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def load_config(path: str | Path | None) -> RunConfig:
    """Read a TOML or JSON config; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        else:
            data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise SchemaError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise SchemaError("config must be a mapping")
    return RunConfig.from_dict(data)
