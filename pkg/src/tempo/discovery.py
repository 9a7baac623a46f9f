"""Disk-backed cache of the aggregated MCP tool catalog.

The cache key is an MD5 fingerprint of the server registrations, the
modification times of every file under the servers directory, and the
modification time of the project config file. The hashed text is::

    server:<command line>          one line per registered server, sorted
    <path>:<mtime seconds>         one line per watched file, sorted by path
    config:<mtime seconds>

joined with ``\\n``. Any edit to server code, a registration change or a
config change produces a new fingerprint, so a stale catalog is never served.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Iterable, Optional

from tempo.mcpio import ServerPool, SessionError, ToolSignature
from tempo.temporal import format_instant, parse_instant

log = logging.getLogger(__name__)

DEFAULT_TTL = timedelta(hours=24)
DEFAULT_CACHE_PATH = Path(".tempo") / "discovery_cache.json"


class DiscoveryError(Exception):
    """Some servers could not be listed; ``tools`` holds what the rest returned."""

    def __init__(self, failures: dict[str, str], tools: list[ToolSignature] | None = None):
        super().__init__("discovery failed on: " + ", ".join(f"{k} ({v})" for k, v in sorted(failures.items())))
        self.failures = failures
        self.tools = list(tools or [])


class CatalogSource(str, enum.Enum):
    DISK_CACHE = "DiskCache"
    FRESH = "Fresh"


@dataclass(frozen=True)
class ToolCatalog:
    tools: tuple[ToolSignature, ...]
    fingerprint: str
    created_at: datetime

    def __post_init__(self) -> None:
        seen = set()
        for t in self.tools:
            key = (t.server, t.tool)
            if key in seen:
                raise ValueError(f"duplicate tool {t.server}.{t.tool} in catalog")
            seen.add(key)
        object.__setattr__(self, "tools", tuple(self.tools))

    def __len__(self) -> int:
        return len(self.tools)

    def has(self, server: str, tool: str) -> bool:
        return any(t.server == server and t.tool == tool for t in self.tools)

    def servers(self) -> list[str]:
        return sorted({t.server for t in self.tools})

    def to_json(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "created_at": format_instant(self.created_at),
            "tools": [t.to_json() for t in self.tools],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ToolCatalog":
        fp = obj["fingerprint"]
        if not isinstance(fp, str) or len(fp) != 32:
            raise ValueError("fingerprint must be a 32-char hex string")
        return cls(tuple(ToolSignature.from_json(t) for t in obj["tools"]), fp, parse_instant(obj["created_at"]))


@dataclass(frozen=True)
class FingerprintInputs:
    server_paths: tuple[str, ...]
    source_mtimes: dict[str, int]
    config_mtime: int

    @classmethod
    def collect(
        cls, server_paths: Iterable[str], servers_dir: str | Path, config_path: str | Path
    ) -> "FingerprintInputs":
        servers_dir = Path(servers_dir)
        if not servers_dir.is_dir():
            raise FileNotFoundError(f"servers directory not found: {servers_dir}")
        mtimes = {}
        for p in sorted(servers_dir.rglob("*")):
            if p.is_file() and "__pycache__" not in p.parts:
                mtimes[str(p)] = int(p.stat().st_mtime)
        config_path = Path(config_path)
        try:
            config_mtime = int(config_path.stat().st_mtime)
        except FileNotFoundError:
            raise FileNotFoundError(f"config file not found: {config_path}") from None
        return cls(tuple(sorted(server_paths)), mtimes, config_mtime)


def canonical_text(inputs: FingerprintInputs) -> str:
    lines = [f"server:{p}" for p in sorted(inputs.server_paths)]
    lines += [f"{p}:{int(inputs.source_mtimes[p])}" for p in sorted(inputs.source_mtimes)]
    lines.append(f"config:{int(inputs.config_mtime)}")
    return "\n".join(lines)


def compute_fingerprint(inputs: FingerprintInputs) -> str:
    return hashlib.md5(canonical_text(inputs).encode("utf-8")).hexdigest()


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def read_catalog(path: Path) -> Optional[ToolCatalog]:
    """Parse a cache file; anything unreadable counts as absent."""
    try:
        return ToolCatalog.from_json(json.loads(path.read_text("utf-8")))
    except FileNotFoundError:
        return None
    except (OSError, ValueError, KeyError, TypeError) as exc:
        log.info("ignoring corrupt discovery cache %s: %s", path, exc)
        return None


async def discover_live(pool: ServerPool) -> list[ToolSignature]:
    """Spawn each registered server, list its tools, tear it down (in registry order)."""
    tools: list[ToolSignature] = []
    failures: dict[str, str] = {}
    for name in pool.names:
        try:
            async with pool.ephemeral(name) as session:
                tools.extend(await session.list_tools(pool.timeout))
        except SessionError as exc:
            failures[name] = str(exc)
    if failures:
        raise DiscoveryError(failures, tools)
    return tools


class DiscoveryCache:
    def __init__(
        self,
        cache_path: str | Path = DEFAULT_CACHE_PATH,
        servers_dir: str | Path | None = None,
        config_path: str | Path | None = None,
        ttl: timedelta = DEFAULT_TTL,
        now: Callable[[], datetime] | None = None,
    ):
        from tempo.mcpio import SERVERS_DIR

        self.cache_path = Path(cache_path)
        self.servers_dir = Path(servers_dir) if servers_dir is not None else SERVERS_DIR
        self.config_path = Path(config_path) if config_path is not None else _default_config_path()
        self.ttl = ttl
        self._now = now or (lambda: datetime.now(timezone.utc))

    def fingerprint(self, pool: ServerPool) -> str:
        inputs = FingerprintInputs.collect(
            (spec.command_line for spec in pool.registry.values()), self.servers_dir, self.config_path
        )
        return compute_fingerprint(inputs)

    async def load_or_discover(self, pool: ServerPool) -> tuple[ToolCatalog, CatalogSource]:
        fp = self.fingerprint(pool)
        cached = read_catalog(self.cache_path)
        if cached is not None and cached.fingerprint == fp and self._now() - cached.created_at < self.ttl:
            return cached, CatalogSource.DISK_CACHE
        tools = await discover_live(pool)
        catalog = ToolCatalog(tuple(tools), fp, self._now().replace(microsecond=0))
        write_atomic(self.cache_path, json.dumps(catalog.to_json(), indent=2, sort_keys=True) + "\n")
        return catalog, CatalogSource.FRESH


async def load_or_discover(
    pool: ServerPool,
    cache_path: str | Path = DEFAULT_CACHE_PATH,
    ttl: timedelta = DEFAULT_TTL,
    **kwargs,
) -> tuple[ToolCatalog, CatalogSource]:
    return await DiscoveryCache(cache_path, ttl=ttl, **kwargs).load_or_discover(pool)


async def fresh_catalog(pool: ServerPool) -> ToolCatalog:
    """Uncached discovery, as the unoptimized pipeline does on every query."""
    tools = await discover_live(pool)
    return ToolCatalog(tuple(tools), "0" * 32, datetime.now(timezone.utc).replace(microsecond=0))


def _default_config_path() -> Path:
    # The installed package's pyproject when running from a checkout, else the sim server file.
    here = Path(__file__).resolve()
    for parent in here.parents:
        candidate = parent / "pyproject.toml"
        if candidate.is_file():
            return candidate
    from tempo.mcpio.registry import SIM_SERVER

    return SIM_SERVER


__all__ = [
    "CatalogSource",
    "DiscoveryCache",
    "DiscoveryError",
    "FingerprintInputs",
    "ToolCatalog",
    "ToolSignature",
    "canonical_text",
    "compute_fingerprint",
    "discover_live",
    "fresh_catalog",
    "load_or_discover",
    "read_catalog",
    "write_atomic",
]
