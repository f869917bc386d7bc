"""
Unit tests for the MCP pipeline tools: definitions, routing, error texts and
the output directory tools.
"""

import unittest
import tempfile
import shutil
import json
import sys
from pathlib import Path
from unittest.mock import MagicMock, patch

# Add the parent directory to the path so we can import from src
sys.path.insert(0, str(Path(__file__).parent.parent))

import src.tools.navigation.config as config
from src.tools.navigation import commands
from src.tools.pipeline_tools import get_pipeline_tool_definitions, handle_pipeline_tool

SMALL_SCENES = {"scenes.train": 2, "scenes.test": 1, "scenes.width": 8.0, "scenes.height": 8.0,
                "scenes.density": 0.1}


class TestToolDefinitions(unittest.TestCase):

    def test_names(self):
        names = [tool.name for tool in get_pipeline_tool_definitions()]
        self.assertEqual(names, ["gen_scenes", "collect_walks", "train_reach", "calibrate_tau", "gen_episodes",
                                 "train_policy", "eval_policy", "ablate", "set_output_directory",
                                 "get_output_directory"])

    def test_schemas(self):
        for tool in get_pipeline_tool_definitions():
            self.assertEqual(tool.inputSchema["type"], "object")

    def test_arm_choices(self):
        tools = {tool.name: tool for tool in get_pipeline_tool_definitions()}
        arms = tools["train_policy"].inputSchema["properties"]["arm"]["enum"]
        self.assertEqual(arms, list(config.ARMS))
        self.assertEqual(tools["set_output_directory"].inputSchema["required"], ["directory"])


class TestPipelineToolHandlers(unittest.IsolatedAsyncioTestCase):

    def setUp(self):
        self.test_dir = Path(tempfile.mkdtemp())
        self.config_file = self.test_dir / ".navmem_config"
        self.base = {"output_dir": str(self.test_dir / "runs"), "overrides": SMALL_SCENES}

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    async def test_gen_scenes(self):
        result = await handle_pipeline_tool("gen_scenes", {**self.base, "seed": 3})
        text = result[0].text
        self.assertTrue(text.startswith("gen_scenes finished."))
        summary = json.loads(text.split("\n\n", 1)[1])
        self.assertEqual((summary["train"], summary["test"]), (2, 1))
        resolved = config.read_resolved(self.test_dir / "runs" / "scenes" / config.RESOLVED_CONFIG_NAME)
        self.assertEqual(resolved["seed"], 3)

    async def test_unknown_preset(self):
        result = await handle_pipeline_tool("gen_scenes", {**self.base, "preset": "laptop"})
        self.assertTrue(result[0].text.startswith("ERROR: Invalid configuration:"))

    async def test_unknown_override_key(self):
        result = await handle_pipeline_tool("gen_scenes", {**self.base, "overrides": {"scenes.count": 3}})
        self.assertIn("unknown config key", result[0].text)

    async def test_missing_prerequisite(self):
        result = await handle_pipeline_tool("collect_walks", self.base)
        self.assertTrue(result[0].text.startswith("ERROR: Pipeline failed:"))
        self.assertIn("gen-scenes", result[0].text)

    async def test_corrupt_manifest(self):
        scene_dir = self.test_dir / "runs" / "scenes"
        scene_dir.mkdir(parents=True)
        (scene_dir / "split.json").write_text("{broken")
        result = await handle_pipeline_tool("collect_walks", self.base)
        self.assertTrue(result[0].text.startswith("ERROR: File system error:"))

    async def test_unexpected_error(self):
        with patch.dict(commands.COMMANDS, {"gen-scenes": MagicMock(side_effect=RuntimeError("boom"))}):
            result = await handle_pipeline_tool("gen_scenes", self.base)
        self.assertTrue(result[0].text.startswith("ERROR: Unexpected error:"))

    async def test_unknown_arm(self):
        result = await handle_pipeline_tool("eval_policy", {**self.base, "arm": "oracle"})
        self.assertTrue(result[0].text.startswith("ERROR: Invalid configuration:"))

    async def test_set_and_get_output_directory(self):
        target = self.test_dir / "my_runs"
        with patch.object(config, "CONFIG_FILE", self.config_file):
            result = await handle_pipeline_tool("set_output_directory", {"directory": str(target)})
            self.assertIn("Output directory updated!", result[0].text)
            self.assertTrue(target.is_dir())
            result = await handle_pipeline_tool("get_output_directory", {})
            self.assertIn(str(target), result[0].text)

    async def test_empty_directory(self):
        result = await handle_pipeline_tool("set_output_directory", {"directory": ""})
        self.assertEqual(result[0].text, "ERROR: Directory path is required")

    async def test_unknown_tool(self):
        self.assertIsNone(await handle_pipeline_tool("search_meal_by_name", {}))


if __name__ == "__main__":
    unittest.main()
