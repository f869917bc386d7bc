"""
Unit tests for experiment configuration: defaults, the key = value format,
presets, resolution order and the saved output directory.
"""

import unittest
import tempfile
import shutil
import json
import sys
from pathlib import Path
from unittest.mock import patch

# Add the parent directory to the path so we can import from src
sys.path.insert(0, str(Path(__file__).parent.parent))

import src.tools.navigation.config as config
from src.tools.navigation.config import ExperimentConfig, resolve
from src.tools.navigation.errors import ConfigError


class TestExperimentConfig(unittest.TestCase):

    def test_defaults(self):
        cfg = ExperimentConfig()
        self.assertEqual(cfg["ppo.lr"], 9e-5)
        self.assertEqual(cfg["memory.capacity"], 20)
        self.assertEqual(cfg["episodes.difficulties"], ["easy", "medium", "hard"])

    def test_every_key_documented(self):
        for key, default, description in config.describe():
            self.assertTrue(description, key)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig({"ppo.learning_rate": 0.1})
        with self.assertRaises(ConfigError):
            ExperimentConfig()["nope"]

    def test_type_checks(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig({"ppo.updates": 1.5})
        with self.assertRaises(ConfigError):
            ExperimentConfig({"ppo.updates": True})
        with self.assertRaises(ConfigError):
            ExperimentConfig({"augment.enabled": 1})
        with self.assertRaises(ConfigError):
            ExperimentConfig({"reach.aggregation": 3})

    def test_int_accepted_for_float(self):
        value = ExperimentConfig({"memory.tau": 1})["memory.tau"]
        self.assertEqual(value, 1.0)
        self.assertIsInstance(value, float)

    def test_text_round_trip(self):
        cfg = ExperimentConfig({"seed": 5, "memory.tau": 0.7, "reach.aggregation": "concat_fc",
                                "eval.seeds": [3, 4]})
        self.assertEqual(ExperimentConfig.parse(cfg.serialize()), cfg)

    def test_parse_comments_and_bare_strings(self):
        cfg = ExperimentConfig.parse("# comment\n\nseed = 3  # trailing\nreach.comparator = symmetric\n")
        self.assertEqual(cfg["seed"], 3)
        self.assertEqual(cfg["reach.comparator"], "symmetric")

    def test_parse_error_names_line(self):
        with self.assertRaises(ConfigError) as ctx:
            ExperimentConfig.parse("seed = 1\nthis line has no assignment\n")
        self.assertIn("line 2", str(ctx.exception))

    def test_presets(self):
        self.assertEqual(ExperimentConfig.preset("desk"), ExperimentConfig())
        paper = ExperimentConfig.preset("paper")
        self.assertEqual(paper["scenes.train"], 72)
        self.assertEqual(paper["reach.embedding"], 512)
        with self.assertRaises(ConfigError):
            ExperimentConfig.preset("laptop")
        self.assertEqual(config.preset_names(), ["desk", "paper"])


class TestModuleConfigs(unittest.TestCase):

    def test_arms(self):
        cfg = ExperimentConfig()
        self.assertFalse(cfg.policy_config("baseline").use_memory)
        self.assertFalse(cfg.policy_config("augment").use_memory)
        self.assertTrue(cfg.policy_config("memory").use_memory)
        self.assertTrue(cfg.policy_config("lt_memory").use_long_term)
        self.assertFalse(cfg.arm_augment("baseline").enabled)
        self.assertTrue(cfg.arm_augment("augment").enabled)
        with self.assertRaises(ConfigError):
            cfg.policy_config("oracle")

    def test_memory_width_follows_embedding(self):
        cfg = ExperimentConfig({"reach.embedding": 32})
        self.assertEqual(cfg.policy_config().memory_dim, 32)
        self.assertEqual(cfg.reach_config().embedding, 32)

    def test_render_shared(self):
        cfg = ExperimentConfig({"sim.views": 2, "sim.rays": 16})
        self.assertEqual(cfg.step_config().render.views, 2)
        self.assertEqual(cfg.reach_config().rays, 16)
        self.assertEqual(cfg.policy_config().views, 2)

    def test_invalid_values(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig({"scenes.cell": 0.0}).scene_params()
        with self.assertRaises(ConfigError):
            ExperimentConfig({"ppo.clip": 0.0}).ppo_config()
        with self.assertRaises(ConfigError):
            ExperimentConfig({"sim.channels": 2}).render_config()
        with self.assertRaises(ConfigError):
            ExperimentConfig({"policy.hidden": 10}).policy_config()

    def test_ppo_config(self):
        ppo = ExperimentConfig({"seed": 9, "ppo.updates": 12}).ppo_config()
        self.assertEqual((ppo.seed, ppo.updates, ppo.clip), (9, 12, 0.2))


class TestResolve(unittest.TestCase):

    def setUp(self):
        self.test_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_precedence(self):
        path = self.test_dir / "exp.cfg"
        path.write_text("seed = 4\nscenes.train = 3\nppo.updates = 10\n")
        cfg = resolve("paper", path, seed=7, out=str(self.test_dir), overrides=["ppo.updates=20"])
        self.assertEqual(cfg["scenes.test"], 14)
        self.assertEqual(cfg["scenes.train"], 3)
        self.assertEqual(cfg["seed"], 7)
        self.assertEqual(cfg["ppo.updates"], 20)
        self.assertEqual(config.output_root(cfg), self.test_dir)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            resolve("desk", self.test_dir / "missing.cfg")

    def test_bad_override(self):
        with self.assertRaises(ConfigError):
            resolve("desk", overrides=["ppo.updates"])

    def test_resolved_file(self):
        cfg = resolve("desk", seed=2)
        path = config.write_resolved(cfg, self.test_dir)
        data = json.loads(path.read_text())
        self.assertEqual(data["code_version"], config.CODE_VERSION)
        self.assertEqual(config.read_resolved(path), cfg)


class TestOutputDirectory(unittest.TestCase):

    def setUp(self):
        self.test_dir = Path(tempfile.mkdtemp())
        self.config_file = self.test_dir / ".navmem_config"

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_default_without_file(self):
        with patch.object(config, "CONFIG_FILE", self.config_file):
            self.assertEqual(config.load_output_dir(), Path("runs"))

    def test_save_and_load(self):
        target = self.test_dir / "runs"
        with patch.object(config, "CONFIG_FILE", self.config_file):
            self.assertEqual(config.save_output_dir(str(target)), target)
            self.assertTrue(target.is_dir())
            self.assertEqual(config.load_output_dir(), target)
            self.assertEqual(config.output_root(ExperimentConfig()), target)

    def test_corrupt_file_ignored(self):
        self.config_file.write_text("{oops")
        with patch.object(config, "CONFIG_FILE", self.config_file):
            self.assertEqual(config.load_output_dir(), Path("runs"))


if __name__ == "__main__":
    unittest.main()
