"""Layered DAG execution over the server pool."""

from __future__ import annotations

import asyncio
import enum
import logging
import time
from dataclasses import dataclass
from typing import Any, Mapping, Optional, Sequence

from tempo.mcpio import ServerPool, SessionError
from tempo.mcpio.wire import RpcError
from tempo.planner import Plan, PlanStep, ResolutionError, find_cycle, resolve_args

log = logging.getLogger(__name__)


class ExecutionMode(str, enum.Enum):
    SEQUENTIAL = "Sequential"
    PARALLEL = "Parallel"


class StepStatus(str, enum.Enum):
    OK = "Ok"
    ERROR = "Error"
    SKIPPED = "Skipped"


@dataclass(frozen=True)
class StepResult:
    step_id: int
    status: StepStatus
    output: Any = None
    error: Optional[str] = None
    latency: float = 0.0
    layer_index: int = 0
    server: str = ""
    tool: str = ""
    started_at: float = 0.0
    finished_at: float = 0.0

    def __post_init__(self) -> None:
        if (self.status is StepStatus.OK) != (self.output is not None):
            raise ValueError(f"step {self.step_id}: output must be present exactly when status is Ok")

    @property
    def ok(self) -> bool:
        return self.status is StepStatus.OK

    def to_json(self) -> dict:
        return {
            "step_id": self.step_id,
            "status": self.status.value,
            "output": self.output,
            "error": self.error,
            "latency": self.latency,
            "layer_index": self.layer_index,
            "server": self.server,
            "tool": self.tool,
        }


@dataclass(frozen=True)
class LayeredPlan:
    layers: tuple[tuple[int, ...], ...]

    def layer_of(self) -> dict[int, int]:
        return {sid: i for i, layer in enumerate(self.layers) for sid in layer}

    def __len__(self) -> int:
        return len(self.layers)


def layer_plan(plan: Plan) -> LayeredPlan:
    """Kahn's algorithm, one round per layer.

    Each round takes every step whose dependencies are all placed, so a
    step's layer index is the length of its longest dependency chain.
    """
    if find_cycle(plan.steps):
        raise ValueError("plan has a dependency cycle")
    ids = {s.step_id for s in plan.steps}
    remaining = {s.step_id: set(s.depends_on) & ids for s in plan.steps}
    layers = []
    while remaining:
        ready = sorted(sid for sid, deps in remaining.items() if not deps)
        if not ready:
            raise ValueError("plan has a dependency cycle")
        layers.append(tuple(ready))
        for sid in ready:
            del remaining[sid]
        for deps in remaining.values():
            deps.difference_update(ready)
    return LayeredPlan(tuple(layers))


async def prefetch_sessions(pool: ServerPool, plan: Plan) -> float:
    """Acquire a pooled session for every server the plan names, concurrently.

    Failures are logged and leave that server Failed; the other servers are
    unaffected. Returns the elapsed time in seconds.
    """
    t0 = time.perf_counter()
    servers = plan.servers()
    results = await asyncio.gather(*(pool.acquire(s) for s in servers), return_exceptions=True)
    for name, res in zip(servers, results):
        if isinstance(res, BaseException):
            log.warning("prefetch of %s failed: %s", name, res)
    return time.perf_counter() - t0


def _blocked_by(step: PlanStep, done: Mapping[int, StepResult]) -> Optional[int]:
    for dep in sorted(step.depends_on):
        res = done.get(dep)
        if res is None or not res.ok:
            return dep
    return None


async def _run_step(
    step: PlanStep, done: Mapping[int, StepResult], layer: int, call, timeout: Optional[float]
) -> StepResult:
    t0 = time.perf_counter()
    base = dict(step_id=step.step_id, layer_index=layer, server=step.server, tool=step.tool, started_at=t0)
    blocker = _blocked_by(step, done)
    if blocker is not None:
        return StepResult(
            status=StepStatus.SKIPPED, error=f"dependency {blocker} did not succeed", finished_at=t0, **base
        )
    try:
        args = resolve_args(step, done)
    except ResolutionError as exc:
        return StepResult(status=StepStatus.SKIPPED, error=str(exc), finished_at=t0, **base)
    try:
        output = await call(step, args, timeout)
        status, error = StepStatus.OK, None
        if output is None:
            output = {}
    except (SessionError, RpcError) as exc:
        output, status, error = None, StepStatus.ERROR, str(exc)
    t1 = time.perf_counter()
    return StepResult(status=status, output=output, error=error, latency=t1 - t0, finished_at=t1, **base)


async def execute(
    plan: Plan, pool: ServerPool, mode: ExecutionMode = ExecutionMode.PARALLEL, timeout: Optional[float] = None
) -> tuple[list[StepResult], float]:
    """Run ``plan``; returns per-step results in declaration order and elapsed seconds.

    Sequential runs steps in declaration order, each in a fresh short-lived
    session. Parallel runs layer by layer on pooled sessions; steps in a layer
    are dispatched together and steps sharing a server queue on its session.
    A failing step never aborts the plan: its dependents are Skipped.
    """
    mode = ExecutionMode(mode)
    timeout = timeout or pool.timeout
    layered = layer_plan(plan)
    layer_of = layered.layer_of()
    done: dict[int, StepResult] = {}
    t0 = time.perf_counter()

    if mode is ExecutionMode.SEQUENTIAL:

        async def call_fresh(step: PlanStep, args: dict, tmo: float) -> Any:
            async with pool.ephemeral(step.server) as session:
                return await session.call_tool(step.tool, args, tmo)

        for step in plan.steps:
            done[step.step_id] = await _run_step(step, done, layer_of[step.step_id], call_fresh, timeout)
    else:

        async def call_pooled(step: PlanStep, args: dict, tmo: float) -> Any:
            return await pool.call_tool(step.server, step.tool, args, tmo)

        for i, layer in enumerate(layered.layers):
            steps = [plan.step(sid) for sid in layer]
            results = await asyncio.gather(*(_run_step(s, done, i, call_pooled, timeout) for s in steps))
            # barrier: the next layer starts only after every result is in
            for r in results:
                done[r.step_id] = r

    elapsed = time.perf_counter() - t0
    return [done[s.step_id] for s in plan.steps], elapsed


def results_by_id(results: Sequence[StepResult]) -> dict[int, StepResult]:
    return {r.step_id: r for r in results}


__all__ = [
    "ExecutionMode",
    "LayeredPlan",
    "StepResult",
    "StepStatus",
    "execute",
    "layer_plan",
    "prefetch_sessions",
    "results_by_id",
]
