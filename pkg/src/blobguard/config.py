"""Server configuration loaded from YAML.

Documented keys (all optional)::

    listen: "127.0.0.1:8470"
    data_dir: "./blobguard-data"
    audit_log: <data_dir>/audit.log
    snapshot: <data_dir>/policy.snapshot
    session_ttl: 3600            # seconds
    quota_window: 60             # default window for users without a role quota
    premium_multiplier: 2
    snapshot_interval: 300       # seconds between periodic snapshots (0 disables)
    fsync: true
    hash_iterations: 100000      # PBKDF2 rounds for credentials
    profile: production          # "production" or "test" default caps
    caps:
      block_blob: 200GiB
      page_blob: 1TiB
      block_size: 4MiB
      account_default: 100TiB
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import yaml

from .blobstore import PRODUCTION_LIMITS, TEST_LIMITS, StoreLimits

_UNITS = {"": 1, "B": 1, "KIB": 2**10, "MIB": 2**20, "GIB": 2**30, "TIB": 2**40,
          "KB": 10**3, "MB": 10**6, "GB": 10**9, "TB": 10**12}
_SIZE_RE = re.compile(r"^\s*(\d+)\s*([A-Za-z]*)\s*$")


class ConfigError(ValueError):
    pass


def parse_size(value: Union[int, str]) -> int:
    """``"4MiB"`` -> 4194304. Bare integers are bytes."""
    if isinstance(value, int):
        return value
    m = _SIZE_RE.match(str(value))
    if not m or m.group(2).upper() not in _UNITS:
        raise ConfigError(f"bad size {value!r}")
    return int(m.group(1)) * _UNITS[m.group(2).upper()]


def parse_listen(value: str) -> Tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"bad listen address {value!r}: expected host:port")
    return host or "127.0.0.1", int(port)


@dataclass
class ServerConfig:
    listen: str = "127.0.0.1:8470"
    data_dir: Path = Path("./blobguard-data")
    audit_log: Optional[Path] = None
    snapshot: Optional[Path] = None
    session_ttl: float = 3600.0
    quota_window: int = 60
    premium_multiplier: Union[int, float, str] = 2
    snapshot_interval: float = 300.0
    fsync: bool = True
    hash_iterations: int = 100_000
    limits: StoreLimits = field(default_factory=lambda: PRODUCTION_LIMITS)

    def __post_init__(self) -> None:
        self.data_dir = Path(self.data_dir)
        self.audit_log = Path(self.audit_log) if self.audit_log else self.data_dir / "audit.log"
        self.snapshot = Path(self.snapshot) if self.snapshot else self.data_dir / "policy.snapshot"

    @property
    def blob_root(self) -> Path:
        return self.data_dir / "blobs"

    @property
    def address(self) -> Tuple[str, int]:
        return parse_listen(self.listen)

    @classmethod
    def from_mapping(cls, data: Dict[str, Any], base: Optional[Path] = None) -> "ServerConfig":
        data = dict(data or {})
        known = {"listen", "data_dir", "audit_log", "snapshot", "session_ttl", "quota_window",
                 "premium_multiplier", "snapshot_interval", "fsync", "hash_iterations", "profile", "caps"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        profile = data.pop("profile", "production")
        if profile not in ("production", "test"):
            raise ConfigError(f"unknown profile {profile!r}")
        limits = PRODUCTION_LIMITS if profile == "production" else TEST_LIMITS
        caps = data.pop("caps", None) or {}
        cap_keys = {"block_blob": "block_blob_cap", "page_blob": "page_blob_cap",
                    "block_size": "max_block_size", "account_default": "account_default_cap"}
        bad = set(caps) - set(cap_keys)
        if bad:
            raise ConfigError(f"unknown caps keys: {sorted(bad)}")
        limits = replace(limits, **{cap_keys[k]: parse_size(v) for k, v in caps.items()})
        for key in ("data_dir", "audit_log", "snapshot"):
            if data.get(key) is not None and base is not None:
                path = Path(data[key]).expanduser()
                data[key] = path if path.is_absolute() else base / path
        return cls(limits=limits, **data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ServerConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_mapping(data, base=path.parent)
