import asyncio
import json
import random
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from tempo.mcpio import (
    DOMAINS,
    ProtocolError,
    RpcError,
    ServerPool,
    ServerSession,
    ServerSpec,
    SessionError,
    SessionState,
    sim_registry,
    sim_spec,
)
from tempo.mcpio import wire
from tempo.mcpio.registry import SERVERS_DIR

BAD = Path(__file__).parent / "fixtures" / "bad_server.py"


def bad_spec(mode, **env):
    return ServerSpec(f"bad-{mode}", (sys.executable, str(BAD), mode), env)


def run(coro):
    return asyncio.run(coro)


# -- framing -------------------------------------------------------------------


def test_encode_is_one_line():
    raw = wire.encode(wire.request(1, "tools/call", {"name": "x", "arguments": {"t": "a\nb "}}))
    assert raw.endswith(b"\n") and raw.count(b"\n") == 1
    assert wire.decode(raw)["params"]["arguments"]["t"] == "a\nb "


def test_parse_response_cases():
    assert wire.parse_response({"jsonrpc": "2.0", "id": 3, "result": 5}, 3) == 5
    with pytest.raises(RpcError) as ei:
        wire.parse_response({"jsonrpc": "2.0", "id": 3, "error": {"code": -32601, "message": "m"}}, 3)
    assert ei.value.code == -32601
    # error replies to unparseable requests carry a null id
    with pytest.raises(RpcError):
        wire.parse_response({"jsonrpc": "2.0", "id": None, "error": {"code": -32700, "message": "m"}}, 3)
    for bad in (
        {"jsonrpc": "2.0", "result": 1},
        {"jsonrpc": "2.0", "id": 4, "result": 1},
        {"jsonrpc": "2.0", "id": 3},
        {"jsonrpc": "2.0", "id": 3, "result": 1, "error": {"code": 1}},
        {"jsonrpc": "2.0", "id": 3, "error": "nope"},
    ):
        with pytest.raises(ProtocolError):
            wire.parse_response(bad, 3)


@settings(max_examples=500)
@given(st.binary(max_size=200))
def test_decode_fuzz_only_protocol_errors(raw):
    try:
        msg = wire.decode(raw)
    except ProtocolError:
        return
    assert isinstance(msg, dict) and msg["jsonrpc"] == "2.0"


json_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.text(max_size=5),
    lambda c: st.lists(c, max_size=3) | st.dictionaries(st.text(max_size=5), c, max_size=3),
    max_leaves=8,
)


@settings(max_examples=500, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.dictionaries(st.sampled_from(["jsonrpc", "id", "result", "error", "method"]), json_values))
def test_parse_response_fuzz_only_known_errors(msg):
    try:
        wire.parse_response(msg, 1)
    except (ProtocolError, RpcError):
        pass


def _load_sim():
    sys.path.insert(0, str(SERVERS_DIR))
    try:
        import sim_server
    finally:
        sys.path.pop(0)
    return sim_server


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.one_of(st.text(max_size=80), json_values.map(json.dumps),
                 st.dictionaries(st.sampled_from(["jsonrpc", "id", "method", "params"]), json_values).map(json.dumps)))
def test_simulator_respond_fuzz(line):
    srv = _load_sim().Server("iot")
    out = srv.respond(line)
    if out is not None:
        assert out["jsonrpc"] == "2.0" and ("result" in out) != ("error" in out)


# -- sessions against the misbehaving peer -------------------------------------------


@pytest.mark.parametrize(
    "mode", ["garbage", "wrong-id", "both", "exit", "partial", "non-utf8"]
)
def test_misbehaving_peer_fails_session_without_crash(mode):
    async def go():
        s = await ServerSession(bad_spec(mode)).start(5)
        with pytest.raises(SessionError):
            await s.call_tool("echo", {}, 5)
        assert s.state is SessionState.FAILED
        with pytest.raises(SessionError):
            await s.call_tool("echo", {}, 5)
        await s.close()
        assert s.process.returncode is not None

    run(go())


def test_silent_peer_times_out():
    async def go():
        s = await ServerSession(bad_spec("silent")).start(5)
        with pytest.raises(SessionError, match="timed out"):
            await s.call_tool("echo", {}, 0.3)
        assert s.state is SessionState.FAILED

    run(go())


@pytest.mark.parametrize("mode", ["init-error", "init-exit"])
def test_failed_handshake(mode):
    async def go():
        s = ServerSession(bad_spec(mode))
        with pytest.raises(SessionError):
            await s.start(5)
        assert s.state is SessionState.FAILED

    run(go())


def test_spawn_failure():
    async def go():
        with pytest.raises(SessionError, match="spawn failed"):
            await ServerSession(ServerSpec("nope", ("/nonexistent/binary",))).start(5)

    run(go())


def test_notifications_and_text_content():
    async def go():
        s = await ServerSession(bad_spec("notify-then-ok")).start(5)
        assert await s.call_tool("echo", {}, 5) == "plain"
        assert s.state is SessionState.READY
        await s.close()

    run(go())


def test_tool_level_error_keeps_session_ready():
    async def go():
        s = await ServerSession(bad_spec("is-error")).start(5)
        with pytest.raises(RpcError, match="bad"):
            await s.call_tool("echo", {}, 5)
        assert s.state is SessionState.READY
        await s.close()

    run(go())


@pytest.mark.parametrize("seed", range(12))
def test_random_bytes_from_peer_never_crash(seed):
    rng = random.Random(seed)
    payload = bytes(rng.randrange(256) for _ in range(rng.randrange(1, 300)))
    if seed % 3 == 0:
        payload += b"\n"

    async def go():
        s = await ServerSession(bad_spec("raw", BAD_SERVER_RAW=payload.hex())).start(5)
        try:
            await s.call_tool("echo", {}, 0.5)
        except (SessionError, RpcError):
            pass
        await s.terminate()

    run(go())


# -- simulators ----------------------------------------------------------------------


def test_sim_handshake_list_and_call(sim_env):
    async def go():
        s = await ServerSession(sim_spec("iot")).start(10)
        tools = await s.list_tools()
        names = {t.tool for t in tools}
        assert {"list_sensors", "get_sensor_reading"} <= names
        out = await s.call_tool("list_sensors", {"asset": "Chiller 6"})
        assert isinstance(out, dict)
        with pytest.raises(RpcError):
            await s.call_tool("no_such_tool", {})
        with pytest.raises(RpcError):
            await s.call_tool("list_sensors", {"asset": 6})
        assert s.state is SessionState.READY
        assert s.sent_ids == list(range(1, s.next_request_id))
        await s.close()

    run(go())


def test_sim_output_is_deterministic(sim_env):
    async def once():
        s = await ServerSession(sim_spec("iot", seed=3)).start(10)
        out = await s.call_tool("get_sensor_reading", {"asset": "Chiller 6", "sensor": "Tonnage", "day": "2020-06-01"})
        await s.close()
        return out

    assert run(once()) == run(once())


# -- pool ---------------------------------------------------------------------------


def test_pool_reuses_and_spawns_once_under_concurrency(sim_env):
    async def go():
        pool = ServerPool(sim_registry())
        try:
            sessions = await asyncio.gather(*(pool.acquire("iot") for _ in range(5)))
            assert len({id(s) for s in sessions}) == 1
            assert pool.spawn_count["iot"] == 1
            await asyncio.gather(*(pool.call_tool("iot", "list_sensors", {"asset": "Chiller 6"}) for _ in range(4)))
            assert pool.spawn_count["iot"] == 1
            assert pool.message_count["iot"] == 5  # handshake + 4 calls
        finally:
            await pool.close()

    run(go())


def test_pool_respawns_failed_session_and_isolates(sim_env):
    async def go():
        pool = ServerPool(sim_registry())
        try:
            s = await pool.acquire("iot")
            await pool.acquire("fmsr")
            s.process.kill()
            await s.process.wait()
            with pytest.raises(SessionError):
                await s.call_tool("list_sensors", {"asset": "Chiller 6"})
            assert pool.state("iot") is SessionState.FAILED
            assert pool.state("fmsr") is SessionState.READY
            s2 = await pool.acquire("iot")
            assert s2 is not s and s2.state is SessionState.READY
            assert pool.spawn_count["iot"] == 2 and pool.spawn_count["fmsr"] == 1
        finally:
            await pool.close()

    run(go())


def test_pool_unknown_and_unspawnable(sim_env):
    async def go():
        pool = ServerPool([ServerSpec("ghost", ("/nonexistent/x",))] + sim_registry())
        try:
            with pytest.raises(SessionError):
                await pool.acquire("missing")
            with pytest.raises(SessionError):
                await pool.acquire("ghost")
            assert pool.state("ghost") is SessionState.FAILED
            await pool.acquire("wo")
            assert pool.state("wo") is SessionState.READY
        finally:
            await pool.close()

    run(go())


def test_pool_rejects_duplicate_names():
    with pytest.raises(ValueError):
        ServerPool([sim_spec("iot"), sim_spec("iot")])


def test_ephemeral_sessions_are_fresh_and_torn_down(sim_env):
    async def go():
        pool = ServerPool(sim_registry())
        procs = []
        for _ in range(2):
            async with pool.ephemeral("wo") as s:
                procs.append(s.process)
                await s.call_tool("list_work_orders", {"asset": "Chiller 6"})
        assert procs[0].pid != procs[1].pid
        assert all(p.returncode is not None for p in procs)
        assert pool.spawn_count["wo"] == 2 and "wo" not in pool.sessions

    run(go())


def test_registry_covers_domains():
    assert [s.name for s in sim_registry()] == list(DOMAINS)
    spec = sim_spec("iot", latency_ms=200, fail=True)
    assert spec.env["TEMPO_SIM_LATENCY_MS"] == "200" and spec.env["TEMPO_SIM_FAIL"] == "1"
