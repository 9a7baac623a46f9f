from __future__ import annotations

import asyncio
import logging
from collections import Counter
from contextlib import asynccontextmanager
from typing import Any, AsyncIterator, Iterable, Optional

from tempo.mcpio.session import (
    DEFAULT_TIMEOUT,
    ServerSession,
    ServerSpec,
    SessionError,
    SessionState,
)

log = logging.getLogger(__name__)


class ServerPool:
    """Persistent sessions, at most one per registered server.

    Acquiring distinct servers never blocks across servers. Acquiring the same
    server concurrently spawns exactly one process. A Failed session is
    respawned once per ``acquire`` call; if that attempt fails the error is
    raised and the session stays Failed. Failures never touch other sessions.

    A pool is bound to the event loop it is first used on.
    """

    def __init__(self, specs: Iterable[ServerSpec], timeout: float = DEFAULT_TIMEOUT):
        self.registry: dict[str, ServerSpec] = {}
        for spec in specs:
            if spec.name in self.registry:
                raise ValueError(f"duplicate server name: {spec.name}")
            self.registry[spec.name] = spec
        self.timeout = timeout
        self.sessions: dict[str, ServerSession] = {}
        self.spawn_count: Counter[str] = Counter()
        self.message_count: Counter[str] = Counter()
        self._acquire_locks: dict[str, asyncio.Lock] = {}

    @property
    def names(self) -> list[str]:
        return list(self.registry)

    def _spec(self, name: str) -> ServerSpec:
        try:
            return self.registry[name]
        except KeyError:
            raise SessionError(name, "server is not registered") from None

    def _count_message(self, name: str) -> None:
        self.message_count[name] += 1

    def state(self, name: str) -> Optional[SessionState]:
        s = self.sessions.get(name)
        return s.state if s else None

    async def _spawn(self, name: str) -> ServerSession:
        spec = self._spec(name)
        session = ServerSession(spec, on_message=self._count_message)
        self.spawn_count[name] += 1
        try:
            await session.start(self.timeout)
        except SessionError:
            await session.close()
            raise
        return session

    async def acquire(self, name: str) -> ServerSession:
        self._spec(name)
        lock = self._acquire_locks.setdefault(name, asyncio.Lock())
        async with lock:
            current = self.sessions.get(name)
            if current is not None and current.state is SessionState.READY:
                return current
            if current is not None:
                await current.close()
            try:
                session = await self._spawn(name)
            except SessionError as exc:
                failed = ServerSession(self.registry[name])
                failed.state = SessionState.FAILED
                failed.error = str(exc)
                self.sessions[name] = failed
                raise
            self.sessions[name] = session
            return session

    async def call_tool(self, name: str, tool: str, args: dict, timeout: float | None = None) -> Any:
        session = await self.acquire(name)
        return await session.call_tool(tool, args, timeout or self.timeout)

    @asynccontextmanager
    async def ephemeral(self, name: str) -> AsyncIterator[ServerSession]:
        """A fresh, unpooled session that is torn down on exit."""
        session = await self._spawn(name)
        try:
            yield session
        finally:
            await session.terminate()

    async def close(self) -> None:
        sessions, self.sessions = list(self.sessions.values()), {}
        await asyncio.gather(*(s.close() for s in sessions), return_exceptions=True)
