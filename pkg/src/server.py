#!/usr/bin/env python3
"""
navmem MCP Server - Main Entry Point
Exposes the navigation pipeline commands as MCP tools.

Installation:
    pip install -r requirements.txt

Usage:
    python src/server.py

Configuration Options:
    - Default output directory: set with the set_output_directory tool,
      stored in ~/.navmem_config.
"""

import asyncio
import logging
import sys
from typing import Any

from mcp.server import Server
from mcp.types import TextContent

from tools.pipeline_tools import get_pipeline_tool_definitions, handle_pipeline_tool


# stdout carries the protocol
logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                    format="%(asctime)s %(levelname)s %(name)s: %(message)s")

# Create server
app = Server("navmem-server")


@app.list_tools()
async def list_tools():
    """List all available pipeline tools."""
    return get_pipeline_tool_definitions()


@app.call_tool()
async def call_tool(name: str, arguments: Any) -> list[TextContent]:
    """Route tool calls to the pipeline handler."""
    result = await handle_pipeline_tool(name, arguments)
    if result is not None:
        return result

    # Unknown tool
    return [TextContent(type="text", text=f"ERROR: Unknown tool: {name}")]


async def main():
    """Run the MCP server."""
    from mcp.server.stdio import stdio_server

    async with stdio_server() as (read_stream, write_stream):
        await app.run(
            read_stream,
            write_stream,
            app.create_initialization_options(),
        )


if __name__ == "__main__":
    asyncio.run(main())
