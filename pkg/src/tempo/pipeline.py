"""One query end to end: cache lookup, discovery, planning, prefetch,
execution, summarization, cache insert.

Timings come from one of two clocks. The wall clock measures each phase
with ``perf_counter``. The simulated clock (:class:`SimCosts`) charges fixed
costs derived from what actually happened (spawns, calls per server and
layer, model calls), so reports are reproducible byte for byte while the
simulators run without artificial sleeps.
"""

from __future__ import annotations

import asyncio
import enum
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from tempo.discovery import (
    DEFAULT_CACHE_PATH,
    CatalogSource,
    DiscoveryCache,
    DiscoveryError,
    ToolCatalog,
    discover_live,
)
from tempo.executor import ExecutionMode, StepResult, StepStatus, execute, prefetch_sessions
from tempo.mcpio import ServerPool, ServerSpec
from tempo.planner import (
    ModelClient,
    Plan,
    PlanningError,
    StubModelClient,
    SummarizationError,
    make_plan,
    stub_summary,
    summarize,
)
from tempo.semcache import CacheConfig, Decision, SemanticCache, make_scorers
from tempo.temporal import ClassifiedQuery, Query, TemporalBucket, classify_and_resolve

log = logging.getLogger(__name__)


class CacheDecision(str, enum.Enum):
    HIT = "Hit"
    MISS = "Miss"
    BYPASS = "Bypass"
    DISABLED = "Disabled"


PHASES = ("cache_lookup", "discovery", "planning", "prefetch", "execution", "summarization")


@dataclass
class PhaseTimings:
    """Seconds per phase; phases never overlap."""

    cache_lookup: float = 0.0
    discovery: float = 0.0
    planning: float = 0.0
    prefetch: float = 0.0
    execution: float = 0.0
    summarization: float = 0.0
    total: float = 0.0

    def phase_sum(self) -> float:
        return sum(getattr(self, p) for p in PHASES)

    def to_json(self) -> dict:
        return {p: getattr(self, p) for p in PHASES + ("total",)}


@dataclass(frozen=True)
class PipelineConfig:
    cache_enabled: bool = True
    discovery_cache_enabled: bool = True
    parallel_execution: bool = True
    thresholds: CacheConfig = field(default_factory=CacheConfig)
    timeout: float = 30.0

    ARMS = {
        "baseline": (False, False, False),
        "mcp_only": (False, True, True),
        "cache_only": (True, False, False),
        "combined": (True, True, True),
    }

    @classmethod
    def arm(cls, name: str, thresholds: CacheConfig | None = None, timeout: float = 30.0) -> "PipelineConfig":
        try:
            cache, disc, par = cls.ARMS[name]
        except KeyError:
            raise ValueError(f"unknown arm {name!r}; expected one of {sorted(cls.ARMS)}") from None
        return cls(cache, disc, par, thresholds or CacheConfig(), timeout)

    @property
    def mode(self) -> ExecutionMode:
        return ExecutionMode.PARALLEL if self.parallel_execution else ExecutionMode.SEQUENTIAL


@dataclass(frozen=True)
class SimCosts:
    """Nominal costs (milliseconds) charged by the simulated clock."""

    spawn_ms: float = 300.0
    call_ms: float = 200.0
    plan_ms: float = 1000.0
    summarize_ms: float = 600.0
    lookup_ms: float = 2.0
    disk_ms: float = 2.0

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def from_mapping(cls, values: dict) -> "SimCosts":
        known = {k: float(v) for k, v in values.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def execution(self, plan: Plan, results: Sequence[StepResult], mode: ExecutionMode, spawns: int) -> float:
        attempted = [r for r in results if r.status is not StepStatus.SKIPPED]
        if mode is ExecutionMode.SEQUENTIAL:
            return len(attempted) * (self.spawn_ms + self.call_ms) / 1000.0
        by_layer: dict[int, Counter] = {}
        for r in attempted:
            by_layer.setdefault(r.layer_index, Counter())[r.server] += 1
        # same-server steps queue on one session; different servers overlap
        ms = sum(max(c.values()) * self.call_ms for c in by_layer.values())
        if spawns:
            ms += self.spawn_ms
        return ms / 1000.0


@dataclass
class PipelineOutcome:
    query_id: str
    answer: str
    timings: PhaseTimings
    cache_decision: CacheDecision
    bucket: Optional[TemporalBucket] = None
    plan: Optional[Plan] = None
    step_results: Optional[list[StepResult]] = None
    catalog_source: Optional[CatalogSource] = None
    similarity: Optional[float] = None
    judge_score: Optional[float] = None
    matched_entry: Optional[str] = None
    inserted: bool = False
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "answer": self.answer,
            "cache_decision": self.cache_decision.value,
            "bucket": self.bucket.value if self.bucket else None,
            "timings": self.timings.to_json(),
            "plan": self.plan.to_json() if self.plan else None,
            "step_results": [r.to_json() for r in self.step_results] if self.step_results is not None else None,
            "catalog_source": self.catalog_source.value if self.catalog_source else None,
            "similarity": self.similarity,
            "judge_score": self.judge_score,
            "matched_entry": self.matched_entry,
            "inserted": self.inserted,
            "error": self.error,
        }


class Pipeline:
    """Owns one server pool, one event loop, one semantic cache.

    Queries must be answered one at a time. Do not share the pool with
    another pipeline.
    """

    def __init__(
        self,
        config: PipelineConfig,
        specs: Iterable[ServerSpec],
        model: ModelClient | None = None,
        cache: SemanticCache | None = None,
        discovery_cache_path: str | Path = DEFAULT_CACHE_PATH,
        sim: SimCosts | None = None,
        summarizer: ModelClient | None = None,
    ):
        self.config = config
        self.pool = ServerPool(specs, timeout=config.timeout)
        self.model = model or StubModelClient()
        self.summarizer = summarizer or self.model
        if cache is None:
            embedder, judger = make_scorers(config.thresholds)
            cache = SemanticCache(config.thresholds, embedder, judger)
        self.cache = cache
        self.discovery = DiscoveryCache(discovery_cache_path)
        self.sim = sim
        self._loop = asyncio.new_event_loop()
        self.insert_log: list[tuple[str, TemporalBucket]] = []

    # -- lifecycle -------------------------------------------------------

    def close(self) -> None:
        if self._loop.is_closed():
            return
        self._loop.run_until_complete(self.pool.close())
        self._loop.close()

    def __enter__(self) -> "Pipeline":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def run(self, coro):
        return self._loop.run_until_complete(coro)

    # -- phases ----------------------------------------------------------

    def _spawns(self) -> int:
        return sum(self.pool.spawn_count.values())

    async def _discover(self) -> tuple[ToolCatalog, CatalogSource]:
        if self.config.discovery_cache_enabled:
            try:
                return await self.discovery.load_or_discover(self.pool)
            except DiscoveryError as exc:
                log.warning("%s; continuing with partial catalog", exc)
                return self._partial(exc), CatalogSource.FRESH
        try:
            tools = await discover_live(self.pool)
        except DiscoveryError as exc:
            log.warning("%s; continuing with partial catalog", exc)
            return self._partial(exc), CatalogSource.FRESH
        return ToolCatalog(tuple(tools), "0" * 32, _now()), CatalogSource.FRESH

    @staticmethod
    def _partial(exc: DiscoveryError) -> ToolCatalog:
        return ToolCatalog(tuple(exc.tools), "0" * 32, _now())

    async def _plan_execute(self, query: Query, out: PipelineOutcome) -> Optional[str]:
        """Discovery through summarization; fills ``out`` and returns the answer."""
        t = out.timings
        sim = self.sim

        s0, t0 = self._spawns(), time.perf_counter()
        catalog, source = await self._discover()
        t.discovery = time.perf_counter() - t0
        out.catalog_source = source
        if sim:
            spawned = self._spawns() - s0
            t.discovery = spawned * sim.spawn_ms / 1000.0 if source is CatalogSource.FRESH else sim.disk_ms / 1000.0

        t0 = time.perf_counter()
        try:
            plan = await asyncio.to_thread(make_plan, query, catalog, self.model)
        except PlanningError as exc:
            t.planning = sim.plan_ms / 1000.0 if sim else time.perf_counter() - t0
            out.error = f"planning failed: {exc}"
            return None
        t.planning = sim.plan_ms / 1000.0 if sim else time.perf_counter() - t0
        out.plan = plan

        mode = self.config.mode
        if mode is ExecutionMode.PARALLEL:
            s0 = self._spawns()
            t.prefetch = await prefetch_sessions(self.pool, plan)
            if sim:
                t.prefetch = sim.spawn_ms / 1000.0 if self._spawns() > s0 else 0.0

        s0 = self._spawns()
        results, t.execution = await execute(plan, self.pool, mode, self.config.timeout)
        out.step_results = results
        if sim:
            extra = self._spawns() - s0 if mode is ExecutionMode.PARALLEL else 0
            t.execution = sim.execution(plan, results, mode, extra)

        t0 = time.perf_counter()
        if not results:
            answer = "The plan had no steps to run."
        else:
            try:
                answer = await asyncio.to_thread(summarize, query, results, self.summarizer)
            except SummarizationError as exc:
                out.error = str(exc)
                answer = stub_summary(query.text, [r.to_json() for r in results])
        t.summarization = sim.summarize_ms / 1000.0 if sim else time.perf_counter() - t0
        return answer

    # -- entry points ----------------------------------------------------

    async def answer(self, query: Query) -> PipelineOutcome:
        start = time.perf_counter()
        timings = PhaseTimings()
        cq = classify_and_resolve(query)
        out = PipelineOutcome(query.id, "", timings, CacheDecision.DISABLED, bucket=cq.bucket)

        if self.config.cache_enabled:
            t0 = time.perf_counter()
            lookup = self.cache.lookup(cq)
            timings.cache_lookup = time.perf_counter() - t0
            if self.sim:
                timings.cache_lookup = self.sim.lookup_ms / 1000.0
            out.similarity, out.judge_score = lookup.similarity, lookup.judge_score
            if lookup.decision is Decision.HIT:
                out.cache_decision = CacheDecision.HIT
                out.answer = lookup.answer
                out.matched_entry = lookup.matched_entry
                timings.total = timings.phase_sum() if self.sim else time.perf_counter() - start
                return out
            out.cache_decision = CacheDecision.BYPASS if lookup.decision is Decision.BYPASS else CacheDecision.MISS

        answer = await self._plan_execute(query, out)
        out.answer = answer or ""
        if (
            answer is not None
            and out.error is None
            and out.cache_decision is CacheDecision.MISS
            and cq.bucket in (TemporalBucket.STATIC, TemporalBucket.ANCHORED)
        ):
            self._insert(cq, answer)
            out.inserted = True
        timings.total = timings.phase_sum() if self.sim else time.perf_counter() - start
        return out

    def _insert(self, cq: ClassifiedQuery, answer: str) -> None:
        self.cache.insert(cq, answer)
        self.insert_log.append((cq.query.id, cq.bucket))

    def answer_query(self, query: Query) -> PipelineOutcome:
        return self.run(self.answer(query))

    async def warm_async(self, queries: Iterable[Query]) -> int:
        """Run each non-Volatile seed through plan-execute and insert its answer."""
        inserted = 0
        for q in queries:
            cq = classify_and_resolve(q)
            if not cq.cacheable:
                continue
            out = PipelineOutcome(q.id, "", PhaseTimings(), CacheDecision.MISS, bucket=cq.bucket)
            answer = await self._plan_execute(q, out)
            if answer is None or out.error is not None:
                log.warning("warming %s failed: %s", q.id, out.error)
                continue
            self._insert(cq, answer)
            inserted += 1
        return inserted

    def warm(self, queries: Iterable[Query]) -> int:
        return self.run(self.warm_async(queries))

    def prime_discovery(self) -> CatalogSource:
        _, source = self.run(self.discovery.load_or_discover(self.pool))
        return source


def _now() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def answer_query(query: Query, config: PipelineConfig, specs: Iterable[ServerSpec], **deps: Any) -> PipelineOutcome:
    """One-shot convenience wrapper; builds and tears down a pipeline."""
    with Pipeline(config, specs, **deps) as p:
        return p.answer_query(query)


__all__ = [
    "PHASES",
    "CacheDecision",
    "PhaseTimings",
    "Pipeline",
    "PipelineConfig",
    "PipelineOutcome",
    "SimCosts",
    "answer_query",
]
