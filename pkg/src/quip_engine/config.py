"""Service configuration: JSON config file plus environment overrides.

Schema (all keys optional):

    {
      "port": 8000,
      "providers": "mock",              // provider implementation id
      "seed": 7,                        // mock determinism seed
      "timeout_ms": 10000,              // provider call ceiling
      "template_file": null,            // prompt templates (packaged default)
      "stopword_file": null,            // stopword list (packaged default)
      "log_dir": "./quip_logs",         // event log directory
      "defaults": {                     // per-session defaults
        "mode": "full_auto",
        "window_capacity": 5,
        "keyword_count": 6,
        "association_count": 4
      }
    }

Environment overrides: QUIP_PORT, QUIP_PROVIDERS, QUIP_SEED,
QUIP_TIMEOUT_MS, QUIP_TEMPLATE_FILE, QUIP_STOPWORD_FILE, QUIP_LOG_DIR.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .errors import InvalidConfig
from .transcript import MODES


@dataclass
class ServiceConfig:
    port: int = 8000
    providers: str = "mock"
    seed: int = 7
    timeout_ms: int = 10000
    template_file: str | None = None
    stopword_file: str | None = None
    log_dir: str = "./quip_logs"
    defaults: dict = field(
        default_factory=lambda: {
            "mode": "full_auto",
            "window_capacity": 5,
            "keyword_count": 6,
            "association_count": 4,
        }
    )

    def __post_init__(self):
        if self.defaults.get("mode") not in MODES:
            raise InvalidConfig(f"unknown default mode {self.defaults.get('mode')!r}")


_ENV_KEYS = {
    "QUIP_PORT": ("port", int),
    "QUIP_PROVIDERS": ("providers", str),
    "QUIP_SEED": ("seed", int),
    "QUIP_TIMEOUT_MS": ("timeout_ms", int),
    "QUIP_TEMPLATE_FILE": ("template_file", str),
    "QUIP_STOPWORD_FILE": ("stopword_file", str),
    "QUIP_LOG_DIR": ("log_dir", str),
}


def load_config(path: str | None = None, env: dict | None = None) -> ServiceConfig:
    env = os.environ if env is None else env
    data: dict = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, ValueError) as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    known = set(ServiceConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
    merged = dict(data)
    for env_key, (attr, cast) in _ENV_KEYS.items():
        if env_key in env:
            try:
                merged[attr] = cast(env[env_key])
            except ValueError as exc:
                raise InvalidConfig(f"bad value for {env_key}: {env[env_key]!r}") from exc
    if "defaults" in merged:
        base = ServiceConfig().defaults
        base.update(merged["defaults"])
        merged["defaults"] = base
    return ServiceConfig(**merged)
