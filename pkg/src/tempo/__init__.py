"""Temporal semantic caching and MCP workflow optimizations for plan-execute agents."""

__version__ = "0.1.0"
