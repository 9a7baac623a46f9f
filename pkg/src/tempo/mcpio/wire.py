"""Newline-delimited JSON-RPC 2.0 framing (the MCP stdio transport).

One message per line, UTF-8, LF-terminated. Everything that touches bytes on
the wire goes through :func:`encode` and :func:`decode`.
"""

from __future__ import annotations

import json
from typing import Any

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602


class ProtocolError(Exception):
    """The peer sent something that is not a valid JSON-RPC 2.0 message."""


class RpcError(Exception):
    """The peer answered with a JSON-RPC error object."""

    def __init__(self, code: int, message: str, data: Any = None):
        super().__init__(f"[{code}] {message}")
        self.code = code
        self.message = message
        self.data = data


def request(req_id: int, method: str, params: dict | None = None) -> dict:
    msg: dict = {"jsonrpc": "2.0", "id": req_id, "method": method}
    if params is not None:
        msg["params"] = params
    return msg


def encode(msg: dict) -> bytes:
    # json.dumps escapes control characters, so the line never contains a raw LF
    return (json.dumps(msg, separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")


def decode(line: bytes) -> dict:
    try:
        text = line.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"line is not UTF-8: {exc}") from None
    text = text.rstrip("\n").rstrip("\r")
    if not text.strip():
        raise ProtocolError("empty line")
    try:
        msg = json.loads(text)
    except ValueError as exc:
        raise ProtocolError(f"not JSON: {text[:80]!r}") from exc
    if not isinstance(msg, dict) or msg.get("jsonrpc") != "2.0":
        raise ProtocolError(f"not a JSON-RPC 2.0 object: {text[:80]!r}")
    return msg


def parse_response(msg: dict, expected_id: int) -> Any:
    """Return ``result`` of a response matching ``expected_id`` or raise."""
    if "id" not in msg:
        raise ProtocolError("response without id")
    if ("result" in msg) == ("error" in msg):
        raise ProtocolError("response must carry exactly one of result/error")
    if "error" in msg:
        err = msg["error"]
        if not isinstance(err, dict) or not isinstance(err.get("code"), int):
            raise ProtocolError(f"malformed error object: {err!r}")
        if msg["id"] not in (expected_id, None):
            raise ProtocolError(f"response id {msg['id']!r} does not match request id {expected_id}")
        raise RpcError(err["code"], str(err.get("message", "")), err.get("data"))
    if msg["id"] != expected_id:
        raise ProtocolError(f"response id {msg['id']!r} does not match request id {expected_id}")
    return msg["result"]
