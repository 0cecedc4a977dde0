#!/usr/bin/env python3
"""
Perceptive Autonomy MCP Server - Stdio Transport Entry Point

FastMCP-based server exposing the experiment pipeline as tools.
"""

from src.server import mcp

if __name__ == "__main__":
    # Run with stdio transport (default for Claude Code and Cursor)
    mcp.run(transport="stdio")
