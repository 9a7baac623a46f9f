import asyncio
import hashlib
import json
import os
import shutil
import sys
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from tempo.discovery import (
    CatalogSource,
    DiscoveryCache,
    DiscoveryError,
    FingerprintInputs,
    ToolCatalog,
    compute_fingerprint,
    discover_live,
    read_catalog,
)
from tempo.mcpio import SERVERS_DIR, ServerPool, ServerSpec, ToolSignature, sim_registry

T0 = datetime(2020, 6, 10, 9, tzinfo=timezone.utc)


class Clock:
    def __init__(self, t):
        self.t = t

    def __call__(self):
        return self.t


@pytest.fixture
def layout(tmp_path, sim_env):
    servers = tmp_path / "servers"
    shutil.copytree(SERVERS_DIR, servers, ignore=shutil.ignore_patterns("__pycache__"))
    config = tmp_path / "tempo.json"
    config.write_text("{}")
    for p in [config, *servers.rglob("*")]:
        os.utime(p, (1_600_000_000, 1_600_000_000))
    specs = [ServerSpec(s.name, (sys.executable, "-S", str(servers / "launch.py"), s.name), s.env) for s in sim_registry()]
    return servers, config, specs, tmp_path / "cache" / "discovery.json"


def make_cache(layout, clock):
    servers, config, _, path = layout
    return DiscoveryCache(path, servers_dir=servers, config_path=config, now=clock)


def load(layout, clock):
    async def go():
        pool = ServerPool(layout[2])
        try:
            cat, src = await make_cache(layout, clock).load_or_discover(pool)
            return cat, src, sum(pool.spawn_count.values())
        finally:
            await pool.close()

    return asyncio.run(go())


def test_fingerprint_matches_independent_md5(layout):
    servers, config, specs, _ = layout
    inputs = FingerprintInputs.collect([s.command_line for s in specs], servers, config)
    lines = sorted(f"server:{s.command_line}" for s in specs)
    files = sorted(str(p) for p in servers.rglob("*") if p.is_file())
    lines += [f"{p}:1600000000" for p in files]
    lines.append("config:1600000000")
    assert compute_fingerprint(inputs) == hashlib.md5("\n".join(lines).encode()).hexdigest()


def test_cold_then_warm(layout):
    clock = Clock(T0)
    cat, src, spawns = load(layout, clock)
    assert src is CatalogSource.FRESH and spawns == 4
    assert cat.has("iot", "list_sensors") and cat.servers() == ["fmsr", "iot", "tsfm", "wo"]
    cat2, src2, spawns2 = load(layout, clock)
    assert src2 is CatalogSource.DISK_CACHE and spawns2 == 0
    assert cat2 == cat


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.data())
def test_single_mtime_change_invalidates(layout, data):
    servers, config, specs, _ = layout
    watched = sorted([config, *(p for p in servers.rglob("*") if p.is_file())])
    target = data.draw(st.sampled_from(watched))
    delta = data.draw(st.integers(1, 10_000) | st.integers(-10_000, -1))
    cmd = [s.command_line for s in specs]
    before = compute_fingerprint(FingerprintInputs.collect(cmd, servers, config))
    old = target.stat().st_mtime
    os.utime(target, (old + delta, old + delta))
    try:
        after = compute_fingerprint(FingerprintInputs.collect(cmd, servers, config))
    finally:
        os.utime(target, (old, old))
    assert before != after
    assert compute_fingerprint(FingerprintInputs.collect(cmd, servers, config)) == before


def test_mtime_change_triggers_rediscovery(layout):
    clock = Clock(T0)
    load(layout, clock)
    target = layout[0] / "manifests" / "wo.json"
    os.utime(target, (1_600_000_100, 1_600_000_100))
    _, src, spawns = load(layout, clock)
    assert src is CatalogSource.FRESH and spawns == 4
    assert load(layout, clock)[1] is CatalogSource.DISK_CACHE


def test_new_file_and_registration_change_invalidate(layout):
    servers, config, specs, _ = layout
    cmd = [s.command_line for s in specs]
    fp = compute_fingerprint(FingerprintInputs.collect(cmd, servers, config))
    assert compute_fingerprint(FingerprintInputs.collect(cmd[:-1], servers, config)) != fp
    (servers / "extra.py").write_text("")
    assert compute_fingerprint(FingerprintInputs.collect(cmd, servers, config)) != fp


def test_ttl_boundary(layout):
    clock = Clock(T0)
    load(layout, clock)
    clock.t = T0 + timedelta(hours=24) - timedelta(seconds=1)
    assert load(layout, clock)[1] is CatalogSource.DISK_CACHE
    clock.t = T0 + timedelta(hours=24)
    assert load(layout, clock)[1] is CatalogSource.FRESH


@pytest.mark.parametrize("content", ["", "{not json", '{"tools": []}', '{"fingerprint": "short", "tools": [], "created_at": "2020-06-10T09:00:00Z"}', "[]"])
def test_corrupt_cache_is_rediscovered(layout, content):
    path = layout[3]
    path.parent.mkdir(parents=True)
    path.write_text(content)
    assert read_catalog(path) is None
    clock = Clock(T0)
    _, src, _ = load(layout, clock)
    assert src is CatalogSource.FRESH
    assert read_catalog(path) is not None
    assert not list(path.parent.glob("*.tmp"))


def test_catalog_round_trip_and_duplicates():
    t = ToolSignature("iot", "x", "d", {"type": "object"})
    cat = ToolCatalog((t,), "a" * 32, T0)
    assert ToolCatalog.from_json(json.loads(json.dumps(cat.to_json()))) == cat
    with pytest.raises(ValueError):
        ToolCatalog((t, t), "a" * 32, T0)


def test_partial_failure_reports_surviving_tools(layout):
    specs = layout[2] + [ServerSpec("ghost", ("/nonexistent/x",))]

    async def go():
        pool = ServerPool(specs)
        with pytest.raises(DiscoveryError) as ei:
            await discover_live(pool)
        return ei.value

    err = asyncio.run(go())
    assert set(err.failures) == {"ghost"}
    assert {t.server for t in err.tools} == {"iot", "fmsr", "tsfm", "wo"}


def test_missing_servers_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        FingerprintInputs.collect([], tmp_path / "nope", tmp_path)
