"""Perceptive autonomy MCP tools - FastMCP implementation."""
