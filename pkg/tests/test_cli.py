"""
Unit tests for the command-line front end.
"""

import unittest
import tempfile
import shutil
import io
import json
import sys
from contextlib import redirect_stdout
from pathlib import Path

# Add the parent directory to the path so we can import from src
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.tools.navigation.cli import build_parser, main


class TestParser(unittest.TestCase):

    def test_defaults(self):
        args = build_parser().parse_args(["train-policy"])
        self.assertEqual((args.preset, args.arm, args.overrides), ("desk", "memory", []))

    def test_repeatable_overrides(self):
        args = build_parser().parse_args(["gen-scenes", "--set", "seed=1", "--set", "scenes.train=2"])
        self.assertEqual(args.overrides, ["seed=1", "scenes.train=2"])

    def test_unknown_arm_rejected(self):
        with self.assertRaises(SystemExit):
            build_parser().parse_args(["eval", "--arm", "oracle"])


class TestMain(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def run_main(self, argv):
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            code = main(argv)
        return code, buffer.getvalue()

    def test_show_config(self):
        code, out = self.run_main(["show-config", "--preset", "paper", "--set", "ppo.lr=0.001"])
        self.assertEqual(code, 0)
        table = json.loads(out)
        self.assertEqual(table["ppo.lr"]["value"], 0.001)
        self.assertEqual(table["ppo.lr"]["default"], 9e-5)
        self.assertEqual(table["scenes.train"]["value"], 72)

    def test_gen_scenes(self):
        code, out = self.run_main(["gen-scenes", "--out", self.test_dir, "--set", "scenes.train=1",
                                   "--set", "scenes.test=1", "--set", "scenes.width=8.0",
                                   "--set", "scenes.height=8.0"])
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(out)["train"], 1)
        self.assertTrue((Path(self.test_dir) / "scenes" / "split.json").exists())

    def test_pipeline_error_exit_code(self):
        code, out = self.run_main(["collect-walks", "--out", self.test_dir])
        self.assertEqual(code, 1)
        self.assertEqual(out, "")

    def test_bad_override_exit_code(self):
        code, _ = self.run_main(["gen-scenes", "--out", self.test_dir, "--set", "scenes.count=3"])
        self.assertEqual(code, 1)


if __name__ == "__main__":
    unittest.main()
