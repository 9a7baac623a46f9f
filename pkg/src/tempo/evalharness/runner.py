"""Paired baseline/optimized runs over a test file."""

from __future__ import annotations

import enum
import logging
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from tempo.evalharness.workload import ScenarioRow, Tier, warm_parent_set
from tempo.mcpio import sim_registry
from tempo.pipeline import CacheDecision, PhaseTimings, Pipeline, PipelineConfig, PipelineOutcome, SimCosts
from tempo.planner import StubModelClient
from tempo.semcache import CacheConfig

log = logging.getLogger(__name__)


class Arm(str, enum.Enum):
    BASELINE = "Baseline"
    OPTIMIZED = "Optimized"


@dataclass
class RunRecord:
    scenario_id: str
    parent_id: str
    tier: Tier
    arm: str
    outcome: PipelineOutcome
    latency: float  # seconds on the harness clock (simulated or wall)
    wall_latency: float  # always measured


@dataclass(frozen=True)
class HarnessSettings:
    clock: str = "sim"
    costs: SimCosts = field(default_factory=SimCosts)
    thresholds: CacheConfig = field(default_factory=CacheConfig)
    sim_seed: int = 0
    timeout: float = 30.0
    optimized_arm: str = "combined"
    baseline_arm: str = "baseline"

    def __post_init__(self) -> None:
        if self.clock not in ("sim", "wall"):
            raise ValueError("clock must be 'sim' or 'wall'")
        PipelineConfig.arm(self.optimized_arm)
        PipelineConfig.arm(self.baseline_arm)

    def to_json(self) -> dict:
        return {
            "clock": self.clock,
            "costs_ms": dict(self.costs.__dict__),
            "thresholds": {
                "tau_sim": self.thresholds.tau_sim,
                "tau_judge": self.thresholds.tau_judge,
                "top_k": self.thresholds.top_k,
                "capacity": self.thresholds.capacity,
                "embedding_dim": self.thresholds.embedding_dim,
                "window_gate": self.thresholds.window_gate,
            },
            "sim_seed": self.sim_seed,
            "optimized_arm": self.optimized_arm,
            "baseline_arm": self.baseline_arm,
        }


def build_pipeline(arm: str, settings: HarnessSettings, discovery_cache: Path) -> Pipeline:
    cfg = PipelineConfig.arm(arm, settings.thresholds, settings.timeout)
    c = settings.costs
    if settings.clock == "sim":
        specs = sim_registry(seed=settings.sim_seed)
        model = StubModelClient()
        sim = c
    else:
        specs = sim_registry(latency_ms=c.call_ms, spawn_ms=c.spawn_ms, seed=settings.sim_seed)
        model = StubModelClient(latency=c.plan_ms / 1000.0, summarize_latency=c.summarize_ms / 1000.0)
        sim = None
    return Pipeline(cfg, specs, model=model, discovery_cache_path=discovery_cache, sim=sim)


@dataclass
class HarnessResult:
    settings: HarnessSettings
    baseline: list[RunRecord]
    optimized: list[RunRecord]
    warm_parents: set[str]
    warmed: int

    @property
    def pairs(self) -> list[tuple[RunRecord, RunRecord]]:
        if not self.baseline or not self.optimized:
            return []
        return list(zip(self.baseline, self.optimized))


def _run_one(p: Pipeline, row: ScenarioRow, arm: Arm) -> RunRecord:
    t0 = time.perf_counter()
    try:
        outcome = p.answer_query(row.query())
    except Exception as exc:  # keep going; the row is recorded as an error
        log.exception("row %s (%s) failed", row.id, arm.value)
        outcome = PipelineOutcome(row.id, "", PhaseTimings(), CacheDecision.DISABLED, error=f"harness error: {exc}")
    wall = time.perf_counter() - t0
    latency = outcome.timings.total if p.sim is not None else wall
    return RunRecord(row.id, row.parent_id, row.tier, arm.value, outcome, latency, wall)


def run_paired(
    test_rows: Sequence[ScenarioRow],
    seed_rows: Sequence[ScenarioRow],
    settings: HarnessSettings = HarnessSettings(),
    arms: Sequence[str] = ("baseline", "optimized"),
    workdir: str | Path | None = None,
    progress: Optional[Callable[[int, int], None]] = None,
) -> HarnessResult:
    """Run every row under each requested arm, baseline first, row by row.

    The optimized arm's discovery cache is primed and its semantic cache is
    warmed from ``seed_rows`` before the first test row.
    """
    arms = set(arms)
    unknown = arms - {"baseline", "optimized"}
    if unknown:
        raise ValueError(f"unknown arm(s): {sorted(unknown)}")
    with tempfile.TemporaryDirectory(prefix="tempo-run-") as tmp:
        root = Path(workdir) if workdir is not None else Path(tmp)
        base = build_pipeline(settings.baseline_arm, settings, root / "baseline-discovery.json") if "baseline" in arms else None
        opt = build_pipeline(settings.optimized_arm, settings, root / "optimized-discovery.json") if "optimized" in arms else None
        warmed = 0
        try:
            if opt is not None:
                if opt.config.discovery_cache_enabled:
                    opt.prime_discovery()
                if opt.config.cache_enabled:
                    warmed = opt.warm([r.query() for r in seed_rows])
            b_recs: list[RunRecord] = []
            o_recs: list[RunRecord] = []
            for i, row in enumerate(test_rows, 1):
                if base is not None:
                    b_recs.append(_run_one(base, row, Arm.BASELINE))
                if opt is not None:
                    o_recs.append(_run_one(opt, row, Arm.OPTIMIZED))
                if progress:
                    progress(i, len(test_rows))
        finally:
            for p in (base, opt):
                if p is not None:
                    p.close()
    return HarnessResult(settings, b_recs, o_recs, warm_parent_set(seed_rows), warmed)


__all__ = ["Arm", "HarnessResult", "HarnessSettings", "RunRecord", "build_pipeline", "run_paired"]
