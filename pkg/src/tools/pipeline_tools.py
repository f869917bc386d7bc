"""
MCP tool definitions and handlers for the navigation pipeline.
Each pipeline command is one tool; the commands run in a worker thread so
long jobs do not block the event loop.
"""

import asyncio
import json
import logging
from typing import Any

from mcp.types import TextContent, Tool

from .navigation import commands
from .navigation import config
from .navigation.config import ARMS, resolve
from .navigation.errors import ConfigError, NavMemError, StorageError


logger = logging.getLogger(__name__)


COMMON_PROPERTIES = {
    "preset": {
        "type": "string",
        "enum": ["desk", "paper"],
        "description": "Configuration preset (default: desk)"
    },
    "config_path": {
        "type": "string",
        "description": "Optional key = value config file applied over the preset"
    },
    "seed": {
        "type": "integer",
        "description": "Run seed"
    },
    "output_dir": {
        "type": "string",
        "description": "Optional output root. If not provided, uses the default output directory."
    },
    "overrides": {
        "type": "object",
        "description": "Config overrides as {\"dotted.key\": value}, e.g. {\"ppo.updates\": 200}"
    },
}


def _tool(name: str, description: str, extra: dict = None, required: list = None) -> Tool:
    schema = {"type": "object", "properties": {**COMMON_PROPERTIES, **(extra or {})}}
    if required:
        schema["required"] = required
    return Tool(name=name, description=description, inputSchema=schema)


ARM_PROPERTY = {
    "arm": {
        "type": "string",
        "enum": list(ARMS),
        "description": "Ablation arm: baseline, augment, memory or lt_memory (default: memory)"
    }
}


def get_pipeline_tool_definitions() -> list[Tool]:
    """Return all pipeline tool definitions."""
    return [
        _tool("gen_scenes", "Generate the train/test scenes and the split manifest."),
        _tool("collect_walks", "Record one random-walk observation archive per training scene."),
        _tool("train_reach", "Sample reachability pairs from the walks and train the reachability network."),
        _tool("calibrate_tau", "Sweep the memory threshold tau and report insertions per episode."),
        _tool("gen_episodes", "Generate train and test navigation episodes per difficulty band."),
        _tool("train_policy", "Train a navigation policy with PPO for one ablation arm.", ARM_PROPERTY),
        _tool(
            "eval_policy",
            "Evaluate a trained policy: success rate and SPL per difficulty band, JSON and PDF report.",
            {
                **ARM_PROPERTY,
                "checkpoint": {
                    "type": "string",
                    "description": "Optional checkpoint path. If not provided, uses the arm's final checkpoint."
                },
                "split": {
                    "type": "string",
                    "enum": ["train", "test"],
                    "description": "Episode split to evaluate (default: eval.split)"
                },
            },
        ),
        _tool(
            "ablate",
            "Aggregate evaluation reports of several arms over seeds into a comparison table.",
            {
                "arms": {
                    "type": "array",
                    "items": {"type": "string"},
                    "description": "Arms to compare (default: baseline, augment, memory)"
                },
                "seeds": {
                    "type": "array",
                    "items": {"type": "integer"},
                    "description": "Seeds to aggregate (default: eval.seeds)"
                },
                "reports": {
                    "type": "object",
                    "description": "Optional {label: [report.json paths]} used instead of arms"
                },
            },
        ),
        Tool(
            name="set_output_directory",
            description="Set the default directory where pipeline outputs are written",
            inputSchema={
                "type": "object",
                "properties": {
                    "directory": {
                        "type": "string",
                        "description": "Full path to the output directory (e.g., '~/navmem_runs')"
                    }
                },
                "required": ["directory"]
            },
        ),
        Tool(
            name="get_output_directory",
            description="Show the default directory where pipeline outputs are written",
            inputSchema={"type": "object", "properties": {}},
        ),
    ]


def _resolve(arguments: dict) -> config.ExperimentConfig:
    cfg = resolve(arguments.get("preset", "desk"), arguments.get("config_path"), arguments.get("seed"),
                  arguments.get("output_dir"))
    return cfg.with_overrides(arguments.get("overrides") or {})


def _run(name: str, arguments: dict) -> dict:
    cfg = _resolve(arguments)
    if name == "train_policy":
        return commands.cmd_train_policy(cfg, arguments.get("arm", "memory"))
    if name == "eval_policy":
        return commands.cmd_eval(cfg, arguments.get("arm", "memory"), arguments.get("checkpoint"),
                                 arguments.get("split"))
    if name == "ablate":
        return commands.cmd_ablate(cfg, arguments.get("arms") or ("baseline", "augment", "memory"),
                                   arguments.get("seeds"), arguments.get("reports"))
    return commands.COMMANDS[name.replace("_", "-")](cfg)


PIPELINE_TOOLS = ("gen_scenes", "collect_walks", "train_reach", "calibrate_tau", "gen_episodes",
                  "train_policy", "eval_policy", "ablate")


async def handle_pipeline_tool(name: str, arguments: Any) -> list[TextContent] | None:
    """Handle pipeline tool calls. Returns None if the tool is not a pipeline tool."""
    arguments = arguments or {}

    if name in PIPELINE_TOOLS:
        try:
            summary = await asyncio.to_thread(_run, name, arguments)
            text = f"{name} finished.\n\n{json.dumps(summary, indent=2, sort_keys=True, default=str)}"
            return [TextContent(type="text", text=text)]
        except ConfigError as e:
            return [TextContent(type="text", text=f"ERROR: Invalid configuration: {str(e)}")]
        except (StorageError, OSError) as e:
            return [TextContent(
                type="text",
                text=f"ERROR: File system error: {str(e)}. Check that the output directory is writable."
            )]
        except NavMemError as e:
            return [TextContent(type="text", text=f"ERROR: Pipeline failed: {str(e)}")]
        except Exception as e:
            logger.exception("Unexpected failure in %s", name)
            return [TextContent(type="text", text=f"ERROR: Unexpected error: {str(e)}")]

    elif name == "set_output_directory":
        directory = arguments.get("directory", "")
        if not directory:
            return [TextContent(type="text", text="ERROR: Directory path is required")]
        try:
            new_dir = config.save_output_dir(directory)
            return [TextContent(type="text", text=f"Output directory updated!\n\nNew location: {new_dir}")]
        except Exception as e:
            return [TextContent(type="text", text=f"ERROR: Failed to set directory: {str(e)}")]

    elif name == "get_output_directory":
        return [TextContent(type="text", text=f"Current output directory:\n{config.load_output_dir()}")]

    return None  # Not a pipeline tool
