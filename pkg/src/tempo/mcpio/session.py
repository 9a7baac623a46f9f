from __future__ import annotations

import asyncio
import enum
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from tempo.mcpio import wire

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
_STREAM_LIMIT = 16 * 1024 * 1024


class SessionState(str, enum.Enum):
    STARTING = "Starting"
    READY = "Ready"
    FAILED = "Failed"
    CLOSED = "Closed"


class SessionError(Exception):
    """A session could not be started or broke mid-conversation."""

    def __init__(self, server: str, message: str):
        super().__init__(f"{server}: {message}")
        self.server = server


@dataclass(frozen=True)
class ServerSpec:
    name: str
    command: tuple[str, ...]
    env: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("server name must be non-empty")
        if not self.command:
            raise ValueError(f"server {self.name}: empty command")
        object.__setattr__(self, "command", tuple(self.command))

    @property
    def command_line(self) -> str:
        return " ".join(self.command)


@dataclass(frozen=True)
class ToolSignature:
    server: str
    tool: str
    description: str
    params_schema: dict

    def to_json(self) -> dict:
        return {
            "server": self.server,
            "tool": self.tool,
            "description": self.description,
            "params_schema": self.params_schema,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ToolSignature":
        return cls(obj["server"], obj["tool"], obj.get("description", ""), obj.get("params_schema") or {})


class ServerSession:
    """One stdio conversation with one server process.

    At most one request is in flight at a time; concurrent callers queue on
    the session lock, so their wire exchanges never interleave.
    """

    def __init__(self, spec: ServerSpec, on_message=None):
        self.spec = spec
        self.state = SessionState.STARTING
        self.next_request_id = 1
        self.sent_ids: list[int] = []
        self.process: Optional[asyncio.subprocess.Process] = None
        self.error: Optional[str] = None
        self._lock = asyncio.Lock()
        self._on_message = on_message

    @property
    def name(self) -> str:
        return self.spec.name

    async def start(self, timeout: float = DEFAULT_TIMEOUT) -> "ServerSession":
        env = dict(os.environ)
        env.update(self.spec.env)
        try:
            self.process = await asyncio.create_subprocess_exec(
                *self.spec.command,
                stdin=asyncio.subprocess.PIPE,
                stdout=asyncio.subprocess.PIPE,
                stderr=asyncio.subprocess.DEVNULL,
                env=env,
                limit=_STREAM_LIMIT,
            )
        except OSError as exc:
            self._fail(f"spawn failed: {exc}")
            raise SessionError(self.name, self.error) from exc
        try:
            await self._exchange("initialize", {"protocolVersion": "2024-11-05", "clientInfo": {"name": "tempo"}}, timeout)
        except wire.RpcError as exc:
            self._fail(f"handshake rejected: {exc}")
            await self._kill()
            raise SessionError(self.name, self.error) from exc
        self.state = SessionState.READY
        return self

    def _fail(self, message: str) -> None:
        self.state = SessionState.FAILED
        self.error = message
        log.warning("session %s failed: %s", self.name, message)

    async def _kill(self) -> None:
        proc = self.process
        if proc is None or proc.returncode is not None:
            return
        try:
            proc.kill()
        except ProcessLookupError:
            pass
        await proc.wait()

    async def _exchange(self, method: str, params: dict | None, timeout: float) -> Any:
        async with self._lock:
            if self.state not in (SessionState.STARTING, SessionState.READY):
                raise SessionError(self.name, f"session is {self.state.value}")
            req_id = self.next_request_id
            self.next_request_id += 1
            self.sent_ids.append(req_id)
            if self._on_message is not None:
                self._on_message(self.name)
            try:
                return await asyncio.wait_for(self._roundtrip(req_id, method, params), timeout)
            except asyncio.TimeoutError:
                self._fail(f"{method} timed out after {timeout:.3f}s")
                await self._kill()
                raise SessionError(self.name, self.error) from None
            except wire.ProtocolError as exc:
                self._fail(f"protocol error: {exc}")
                await self._kill()
                raise SessionError(self.name, self.error) from exc
            except (ConnectionError, BrokenPipeError) as exc:
                self._fail(f"pipe closed: {exc}")
                await self._kill()
                raise SessionError(self.name, self.error) from exc

    async def _roundtrip(self, req_id: int, method: str, params: dict | None) -> Any:
        proc = self.process
        assert proc is not None and proc.stdin is not None and proc.stdout is not None
        proc.stdin.write(wire.encode(wire.request(req_id, method, params)))
        await proc.stdin.drain()
        while True:
            try:
                line = await proc.stdout.readline()
            except ValueError as exc:  # line over the stream limit
                raise wire.ProtocolError(str(exc)) from exc
            if not line:
                raise wire.ProtocolError("server closed stdout")
            if not line.strip():
                continue
            msg = wire.decode(line)
            if "method" in msg and "id" not in msg:
                continue  # server notification
            return wire.parse_response(msg, req_id)

    async def request(self, method: str, params: dict | None = None, timeout: float = DEFAULT_TIMEOUT) -> Any:
        if self.state is not SessionState.READY:
            raise SessionError(self.name, f"session is {self.state.value}")
        return await self._exchange(method, params, timeout)

    async def call_tool(self, tool: str, args: dict, timeout: float = DEFAULT_TIMEOUT) -> Any:
        """Invoke ``tools/call``; JSON-RPC errors surface as :class:`wire.RpcError`."""
        result = await self.request("tools/call", {"name": tool, "arguments": args}, timeout)
        if not isinstance(result, dict):
            raise wire.RpcError(wire.INVALID_PARAMS, f"tool {tool} returned a non-object result")
        if result.get("isError"):
            raise wire.RpcError(-32000, _content_text(result) or f"tool {tool} failed")
        if "structuredContent" in result:
            return result["structuredContent"]
        text = _content_text(result)
        try:
            return json.loads(text)
        except ValueError:
            return text

    async def list_tools(self, timeout: float = DEFAULT_TIMEOUT) -> list[ToolSignature]:
        result = await self.request("tools/list", None, timeout)
        tools = result.get("tools") if isinstance(result, dict) else None
        if not isinstance(tools, list):
            raise SessionError(self.name, "tools/list result has no tools array")
        return [
            ToolSignature(self.name, t["name"], t.get("description", ""), t.get("inputSchema") or {}) for t in tools
        ]

    async def terminate(self) -> None:
        """Tear down immediately (SIGKILL); used for short-lived sessions."""
        if self.state is not SessionState.FAILED:
            self.state = SessionState.CLOSED
        await self._kill()

    async def close(self) -> None:
        proc = self.process
        if self.state is not SessionState.FAILED:
            self.state = SessionState.CLOSED
        if proc is None or proc.returncode is not None:
            return
        if proc.stdin is not None and not proc.stdin.is_closing():
            proc.stdin.close()
        try:
            await asyncio.wait_for(proc.wait(), 1.0)
        except asyncio.TimeoutError:
            await self._kill()


def _content_text(result: dict) -> str:
    parts = result.get("content") or []
    return "".join(p.get("text", "") for p in parts if isinstance(p, dict) and p.get("type") == "text")
