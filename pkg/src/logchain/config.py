"""Service/operator configuration: JSON file, environment overrides, API keys.

Precedence: explicit flags override config-file keys, which override defaults.
LOGCHAIN_CONFIG names the config file; LOGCHAIN_PORT overrides the port.
API keys live in a separate JSON file referenced by the config and are stored
hashed (SHA-256 of the presented key), never in the clear.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .anchor import DEFAULT_TIERS
from .core import DifficultyTarget

ENV_CONFIG = "LOGCHAIN_CONFIG"
ENV_PORT = "LOGCHAIN_PORT"

MAX_BODY_BYTES = 1024 * 1024
DEFAULT_QUEUE_DEPTH = 10_000
DEFAULT_PORT = 8321
DEFAULT_SENDER = "logchain-service"

PLANS = ("BASIC", "PREMIUM")


class ConfigError(Exception):
    pass


def hash_api_key(key: str) -> str:
    return hashlib.sha256(key.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ApiKey:
    id: str
    plan: str

    def __post_init__(self) -> None:
        if self.plan not in PLANS:
            raise ConfigError(f"unknown plan {self.plan!r}, want one of {PLANS}")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "private"  # "public" | "private"
    seed: int = 0
    tiers: tuple[tuple[int, float], ...] = DEFAULT_TIERS
    gas_price: int | None = None  # gwei paid per anchor submission (public only)
    sender: str = DEFAULT_SENDER
    allowlist: tuple[str, ...] = (DEFAULT_SENDER,)
    time_scale: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("public", "private"):
            raise ConfigError(f"backend.kind must be public or private, got {self.kind!r}")
        if self.time_scale < 0:
            raise ConfigError("backend.time_scale must be >= 0")


@dataclass(frozen=True)
class Config:
    store_path: str = "logchain-data"
    difficulty: str = "000"
    capacity: int = 10
    port: int = DEFAULT_PORT
    queue_depth: int = DEFAULT_QUEUE_DEPTH
    max_body_bytes: int = MAX_BODY_BYTES
    api_keys_file: str | None = None
    backend: BackendConfig = field(default_factory=BackendConfig)

    def __post_init__(self) -> None:
        try:
            DifficultyTarget(self.difficulty)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {self.capacity}")
        if self.queue_depth < 1:
            raise ConfigError("queue_depth must be >= 1")

    def load_api_keys(self) -> dict[str, ApiKey]:
        """key_hash -> ApiKey from the referenced keys file; empty disables auth checks only
        if no file is configured at all (every request is then rejected)."""
        if self.api_keys_file is None:
            return {}
        try:
            entries = json.loads(Path(self.api_keys_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read api keys file {self.api_keys_file}: {exc}") from exc
        if not isinstance(entries, list):
            raise ConfigError("api keys file must be a JSON list")
        keys = {}
        for entry in entries:
            keys[entry["key_hash"]] = ApiKey(id=entry["id"], plan=entry["plan"])
        return keys


def _backend_from_dict(obj: dict) -> BackendConfig:
    tiers = obj.get("tiers")
    return BackendConfig(
        kind=obj.get("kind", "private"),
        seed=obj.get("seed", 0),
        tiers=tuple((int(t[0]), float(t[1])) for t in tiers) if tiers else DEFAULT_TIERS,
        gas_price=obj.get("gas_price"),
        sender=obj.get("sender", DEFAULT_SENDER),
        allowlist=tuple(obj.get("allowlist", (obj.get("sender", DEFAULT_SENDER),))),
        time_scale=obj.get("time_scale", 0.0),
    )


def load_config(path: str | Path | None = None, env: dict | None = None) -> Config:
    env = os.environ if env is None else env
    if path is None:
        path = env.get(ENV_CONFIG)
    obj: dict = {}
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError("config file must hold a JSON object")
    port = obj.get("port", DEFAULT_PORT)
    if env.get(ENV_PORT):
        try:
            port = int(env[ENV_PORT])
        except ValueError as exc:
            raise ConfigError(f"{ENV_PORT} must be an integer") from exc
    return Config(
        store_path=obj.get("store_path", "logchain-data"),
        difficulty=obj.get("difficulty", "000"),
        capacity=obj.get("capacity", 10),
        port=port,
        queue_depth=obj.get("queue_depth", DEFAULT_QUEUE_DEPTH),
        max_body_bytes=obj.get("max_body_bytes", MAX_BODY_BYTES),
        api_keys_file=obj.get("api_keys_file"),
        backend=_backend_from_dict(obj.get("backend", {})),
    )
