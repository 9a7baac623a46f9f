import asyncio
import json
import random
from collections import defaultdict
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from tempo.executor import (
    ExecutionMode,
    StepResult,
    StepStatus,
    execute,
    layer_plan,
    prefetch_sessions,
    results_by_id,
)
from tempo.mcpio import ServerPool, sim_registry
from tempo.planner import Plan, PlanStep

FIXTURE = json.loads((Path(__file__).parent / "fixtures" / "q6_plan.json").read_text())
Q6 = Plan.from_json({"steps": FIXTURE["steps"]}, "q6")


def random_dag(rng, n):
    """Steps 1..n in declaration order; edges only point backwards."""
    steps = []
    for i in range(1, n + 1):
        deps = {j for j in range(1, i) if rng.random() < 0.3}
        steps.append(PlanStep(i, "iot", "list_sensors", {}, frozenset(deps)))
    rng.shuffle(steps)  # declaration order does not matter for layering
    return Plan(steps)


def longest_path_depth(plan):
    deps = {s.step_id: s.depends_on for s in plan.steps}
    memo = {}

    def depth(i):
        if i not in memo:
            memo[i] = 1 + max((depth(d) for d in deps[i]), default=-1)
        return memo[i]

    return {i: depth(i) for i in deps}


def check_layering(plan):
    layered = layer_plan(plan)
    depth = longest_path_depth(plan)
    want = defaultdict(list)
    for i, d in depth.items():
        want[d].append(i)
    assert [list(layer) for layer in layered.layers] == [sorted(want[d]) for d in range(len(want))]
    where = layered.layer_of()
    for s in plan.steps:
        assert all(where[d] < where[s.step_id] for d in s.depends_on)


def test_layering_matches_longest_path_on_1000_random_dags():
    rng = random.Random(1234)
    for _ in range(1000):
        check_layering(random_dag(rng, rng.randint(1, 12)))


@settings(max_examples=200)
@given(st.integers(1, 12), st.randoms(use_true_random=False))
def test_layering_property(n, rng):
    check_layering(random_dag(rng, n))


def test_q6_layers():
    assert [list(x) for x in layer_plan(Q6).layers] == FIXTURE["layers"]


def test_diamond_layers():
    plan = Plan([PlanStep(1, "iot", "t"), PlanStep(2, "iot", "t", {}, {1}), PlanStep(3, "wo", "t", {}, {1}),
                 PlanStep(4, "fmsr", "t", {}, {2, 3})])
    assert layer_plan(plan).layers == ((1,), (2, 3), (4,))


def test_layering_rejects_cycle():
    with pytest.raises(ValueError):
        layer_plan(Plan([PlanStep(1, "iot", "t", {}, {2}), PlanStep(2, "iot", "t", {}, {1})]))


def test_step_result_invariant():
    with pytest.raises(ValueError):
        StepResult(1, StepStatus.OK, output=None)
    with pytest.raises(ValueError):
        StepResult(1, StepStatus.ERROR, output={})
    assert StepResult(1, StepStatus.SKIPPED, error="x").to_json()["status"] == "Skipped"


# -- running against simulators ----------------------------------------------------------------------


def run_plan(plan, mode, specs, prefetch=False):
    async def go():
        pool = ServerPool(specs, timeout=10)
        try:
            if prefetch:
                await prefetch_sessions(pool, plan)
            results, elapsed = await execute(plan, pool, mode)
            return results, elapsed, dict(pool.spawn_count)
        finally:
            await pool.close()

    return asyncio.run(go())


def read_log(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines()]


def calls_by_tool(log):
    return {r["tool"]: r for r in log if r["method"] == "tools/call"}


def test_parallel_barrier_and_cross_server_overlap(tmp_path, sim_env):
    log_path = tmp_path / "sim.log"
    results, elapsed, spawns = run_plan(Q6, "Parallel", sim_registry(latency_ms=100, log_path=log_path))
    assert all(r.ok for r in results)
    assert [r.layer_index for r in results] == [0, 0, 1, 1, 2]
    calls = calls_by_tool(read_log(log_path))
    by_step = {s.step_id: calls[s.tool] for s in Q6.steps}
    for layer, nxt in (((1, 2), (3, 4)), ((3, 4), (5,))):
        done = max(by_step[i]["t_done"] for i in layer)
        assert all(by_step[j]["t_recv"] >= done for j in nxt)
    # steps on different servers in one layer run at the same time
    a, b = by_step[1], by_step[2]
    assert a["t_recv"] < b["t_done"] and b["t_recv"] < a["t_done"]
    # one pooled process per server
    assert spawns == {"iot": 1, "fmsr": 1}
    assert by_step[1]["pid"] == by_step[3]["pid"] and by_step[2]["pid"] == by_step[4]["pid"] == by_step[5]["pid"]
    assert elapsed >= 0.3


def test_same_server_steps_serialize(tmp_path, sim_env):
    log_path = tmp_path / "sim.log"
    plan = Plan([PlanStep(i, "iot", "list_sensors", {"asset": a}) for i, a in ((1, "Chiller 3"), (2, "Chiller 6"), (3, "Chiller 9"))])
    results, elapsed, _ = run_plan(plan, "Parallel", sim_registry(latency_ms=80, log_path=log_path))
    assert all(r.ok and r.layer_index == 0 for r in results)
    calls = sorted((r for r in read_log(log_path) if r["method"] == "tools/call"), key=lambda r: r["t_recv"])
    assert len({r["pid"] for r in calls}) == 1
    for prev, cur in zip(calls, calls[1:]):
        assert cur["t_recv"] >= prev["t_done"]
    assert elapsed >= 0.24


def test_sequential_uses_fresh_session_per_step(tmp_path, sim_env):
    log_path = tmp_path / "sim.log"
    results, _, spawns = run_plan(Q6, "Sequential", sim_registry(log_path=log_path))
    assert all(r.ok for r in results)
    calls = [r for r in read_log(log_path) if r["method"] == "tools/call"]
    assert [c["tool"] for c in calls] == [s.tool for s in Q6.steps]
    assert len({c["pid"] for c in calls}) == 5
    assert spawns == {"iot": 2, "fmsr": 3}
    for prev, cur in zip(calls, calls[1:]):
        assert cur["t_recv"] >= prev["t_done"]


def test_outputs_equal_across_modes(sim_env):
    seq, _, _ = run_plan(Q6, "Sequential", sim_registry(seed=5))
    par, _, _ = run_plan(Q6, ExecutionMode.PARALLEL, sim_registry(seed=5), prefetch=True)
    assert [r.output for r in seq] == [r.output for r in par]
    assert [r.status for r in seq] == [r.status for r in par]


@pytest.mark.parametrize("mode", ["Sequential", "Parallel"])
def test_fail_isolation_and_skip_propagation(mode, sim_env):
    clean, _, _ = run_plan(Q6, mode, sim_registry())
    results, _, _ = run_plan(Q6, mode, sim_registry(failing={"fmsr"}))
    r = results_by_id(results)
    assert r[1].status is StepStatus.OK and r[3].status is StepStatus.OK
    assert r[1].output == clean[0].output and r[3].output == clean[2].output
    assert r[2].status is StepStatus.ERROR and "configured to fail" in r[2].error
    assert r[4].status is StepStatus.SKIPPED and "dependency 2" in r[4].error
    assert r[5].status is StepStatus.SKIPPED and "dependency 4" in r[5].error


def test_skip_propagates_through_chain(sim_env):
    plan = Plan([
        PlanStep(1, "wo", "list_work_orders", {"asset": "Chiller 6"}),
        PlanStep(2, "iot", "list_sensors", {"asset": "Chiller 6", "context": "$step1"}, {1}),
        PlanStep(3, "iot", "list_sensors", {"asset": "$step2"}, {2}),
        PlanStep(4, "iot", "list_sensors", {"asset": "Chiller 9"}),
    ])
    results, _, _ = run_plan(plan, "Parallel", sim_registry(failing={"wo"}))
    assert [r.status.value for r in results] == ["Error", "Skipped", "Skipped", "Ok"]


def test_tool_error_is_step_error_not_abort(sim_env):
    plan = Plan([PlanStep(1, "iot", "no_such_tool"), PlanStep(2, "iot", "list_sensors", {"asset": "Chiller 6"})])
    results, _, _ = run_plan(plan, "Parallel", sim_registry())
    assert [r.status.value for r in results] == ["Error", "Ok"]


def test_unreachable_server_fails_only_its_steps(sim_env):
    from tempo.mcpio import ServerSpec

    specs = sim_registry() + [ServerSpec("ghost", ("/nonexistent/x",))]
    plan = Plan([PlanStep(1, "ghost", "t"), PlanStep(2, "iot", "list_sensors", {"asset": "Chiller 6"})])
    for mode in ("Sequential", "Parallel"):
        results, _, _ = run_plan(plan, mode, specs, prefetch=mode == "Parallel")
        assert [r.status.value for r in results] == ["Error", "Ok"]
