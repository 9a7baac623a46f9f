"""Server registry for the bundled simulated domain servers."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Iterable

from tempo.mcpio.session import ServerSpec

SERVERS_DIR = Path(__file__).resolve().parent.parent / "servers"
SIM_SERVER = SERVERS_DIR / "sim_server.py"
SIM_LAUNCHER = SERVERS_DIR / "launch.py"
MANIFEST_DIR = SERVERS_DIR / "manifests"
DOMAINS = ("iot", "fmsr", "tsfm", "wo")


def sim_spec(
    domain: str,
    latency_ms: float = 0.0,
    spawn_ms: float = 0.0,
    seed: int = 0,
    data_dir: str | Path | None = None,
    log_path: str | Path | None = None,
    fail: bool = False,
    manifest: str | Path | None = None,
    name: str | None = None,
) -> ServerSpec:
    env = {
        "TEMPO_SIM_LATENCY_MS": str(latency_ms),
        "TEMPO_SIM_SPAWN_MS": str(spawn_ms),
        "TEMPO_SIM_SEED": str(seed),
    }
    if data_dir is not None:
        env["TEMPO_SIM_DATA_DIR"] = str(data_dir)
    if log_path is not None:
        env["TEMPO_SIM_LOG"] = str(log_path)
    if fail:
        env["TEMPO_SIM_FAIL"] = "1"
    if manifest is not None:
        env["TEMPO_SIM_MANIFEST"] = str(manifest)
    # -S skips site initialisation; the simulator is stdlib-only
    return ServerSpec(name or domain, (sys.executable, "-S", str(SIM_LAUNCHER), domain), env)


def sim_registry(
    latency_ms: float = 0.0,
    spawn_ms: float = 0.0,
    seed: int = 0,
    log_path: str | Path | None = None,
    failing: Iterable[str] = (),
    data_dir: str | Path | None = None,
) -> list[ServerSpec]:
    failing = set(failing)
    return [
        sim_spec(d, latency_ms, spawn_ms, seed, data_dir=data_dir, log_path=log_path, fail=d in failing)
        for d in DOMAINS
    ]
