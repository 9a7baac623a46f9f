"""Minimal MCP client: JSON-RPC 2.0 over stdio, pooled sessions, simulated servers."""

from tempo.mcpio.pool import ServerPool
from tempo.mcpio.registry import DOMAINS, SERVERS_DIR, sim_registry, sim_spec
from tempo.mcpio.session import (
    ServerSession,
    ServerSpec,
    SessionError,
    SessionState,
    ToolSignature,
)
from tempo.mcpio.wire import ProtocolError, RpcError

__all__ = [
    "DOMAINS",
    "SERVERS_DIR",
    "ProtocolError",
    "RpcError",
    "ServerPool",
    "ServerSession",
    "ServerSpec",
    "SessionError",
    "SessionState",
    "ToolSignature",
    "sim_registry",
    "sim_spec",
]
