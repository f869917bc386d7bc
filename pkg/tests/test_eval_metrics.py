"""
Unit tests for evaluation: SPL and success rate, reference agents,
episode runs, reports and ablation tables.
"""

import unittest
import tempfile
import shutil
import sys
from pathlib import Path

import numpy as np

# Add the parent directory to the path so we can import from src
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.tools.navigation import storage
from src.tools.navigation.errors import DatasetError
from src.tools.navigation.eval_metrics import (
    EpisodeResult, GeodesicOracleAgent, PolicyAgent, ScriptedAgent, ablation_report, evaluate, spl,
    success_rate, summarize, write_ablation, write_trajectories,
)
from src.tools.navigation.memory import MemoryConfig
from src.tools.navigation.policy import PolicyConfig, PolicyNet
from src.tools.navigation.reachability import ReachabilityConfig, ReachabilityNet
from src.tools.navigation.sim_world import (
    Action, EpisodeSpec, RenderConfig, StepConfig, generate_episode_dataset, generate_scene,
)

STEP = StepConfig(render=RenderConfig(views=2, rays=8))


def result(success, path_length, shortest, difficulty="easy"):
    spec = EpisodeSpec(episode_id=f"e{path_length}", scene_id="scene-0", start_pose=(1.0, 1.0, 0.0),
                       goal_position=(2.0, 2.0), goal_heading=0.0, difficulty=difficulty,
                       geodesic_start_goal=shortest)
    return EpisodeResult(spec=spec, success=success, path_length=path_length, shortest_path=shortest, steps=10)


def report_dict(seed, success, spl_value, dataset="abc"):
    return {"seed": seed, "dataset": dataset, "episodes": 2,
            "difficulty": {"easy": {"success": success, "spl": spl_value, "n": 2},
                           "overall": {"success": success, "spl": spl_value, "n": 2}}}


class TestMetrics(unittest.TestCase):

    def test_perfect_paths(self):
        results = [result(True, 2.0, 2.0), result(True, 4.0, 4.0)]
        self.assertEqual(spl(results), 1.0)
        self.assertEqual(success_rate(results), 1.0)

    def test_longer_path_and_failure(self):
        results = [result(True, 4.0, 2.0), result(False, 1.0, 3.0)]
        self.assertAlmostEqual(spl(results), 0.25)
        self.assertEqual(success_rate(results), 0.5)

    def test_shorter_than_shortest_is_capped(self):
        self.assertEqual(spl([result(True, 1.8, 2.0)]), 1.0)

    def test_spl_bounded_by_success(self):
        rng = np.random.default_rng(0)
        results = [result(bool(rng.random() < 0.6), float(rng.uniform(2, 8)), float(rng.uniform(1.5, 3)))
                   for _ in range(30)]
        self.assertLessEqual(spl(results), success_rate(results))

    def test_matches_formula_on_random_sets(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            n = int(rng.integers(1, 8))
            s = rng.random(n) < 0.5
            l = rng.uniform(1.5, 10.0, n)
            p = rng.uniform(0.0, 20.0, n)
            expected = float(np.mean(s * l / np.maximum(p, l)))
            value = spl([result(bool(a), float(b), float(c)) for a, b, c in zip(s, p, l)])
            self.assertAlmostEqual(value, expected, delta=1e-9)
            self.assertLessEqual(value, float(s.mean()) + 1e-12)

    def test_order_invariant(self):
        results = [result(True, 4.0, 2.0), result(False, 1.0, 3.0), result(True, 3.0, 3.0)]
        self.assertEqual(spl(results), spl(results[::-1]))

    def test_empty(self):
        with self.assertRaises(ValueError):
            spl([])
        with self.assertRaises(ValueError):
            success_rate([])

    def test_summarize(self):
        table = summarize([result(True, 2.0, 2.0), result(False, 5.0, 4.0, "medium")])
        self.assertEqual(set(table), {"easy", "medium", "overall"})
        self.assertEqual(table["easy"]["n"], 1)
        self.assertEqual(table["overall"]["success"], 0.5)


class TestEvaluate(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        scene = generate_scene(12)
        cls.scenes = {scene.id: scene}
        cls.episodes = generate_episode_dataset([scene], 4, rng_seed=3, difficulties=("easy", "medium")).episodes

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_oracle_reaches_goals(self):
        report = evaluate(GeodesicOracleAgent, self.scenes, self.episodes, STEP, seed=0, workers=2)
        overall = report.table["overall"]
        self.assertGreaterEqual(overall["success"], 0.85)
        self.assertGreater(overall["spl"], 0.5)
        self.assertLessEqual(overall["spl"], overall["success"])
        self.assertEqual(report.meta["episodes"], len(self.episodes))

    def test_immediate_stop_fails(self):
        report = evaluate(lambda: ScriptedAgent(Action.STOP), self.scenes, self.episodes, STEP)
        self.assertEqual(report.table["overall"]["success"], 0.0)
        self.assertTrue(all(r.steps == 1 for r in report.results))
        self.assertTrue(all(r.path_length == 0.0 for r in report.results))

    def test_step_limit(self):
        cfg = StepConfig(max_steps=7, render=STEP.render)
        report = evaluate(lambda: ScriptedAgent(Action.TURN_LEFT), self.scenes, self.episodes[:2], cfg)
        self.assertEqual([r.steps for r in report.results], [7, 7])

    def test_results_keep_episode_order(self):
        report = evaluate(lambda: ScriptedAgent(Action.STOP), self.scenes, self.episodes, STEP, workers=3)
        self.assertEqual([r.spec.episode_id for r in report.results], [e.episode_id for e in self.episodes])

    def test_trajectories(self):
        report = evaluate(GeodesicOracleAgent, self.scenes, self.episodes[:1], STEP, record_trajectories=True)
        trajectory = report.results[0].trajectory
        self.assertEqual(len(trajectory), report.results[0].steps)
        self.assertEqual(trajectory[-1]["action"], "STOP")
        path = write_trajectories(Path(self.test_dir) / "trajectories.jsonl", report.results)
        self.assertEqual(len(storage.read_jsonl(path)), len(trajectory))

    def test_report_dict(self):
        report = evaluate(lambda: ScriptedAgent(Action.STOP), self.scenes, self.episodes, STEP, seed=4,
                          meta={"arm": "baseline"})
        data = report.to_dict()
        self.assertEqual(data["arm"], "baseline")
        self.assertEqual(data["seed"], 4)
        self.assertIn("overall", data["difficulty"])
        again = evaluate(lambda: ScriptedAgent(Action.STOP), self.scenes, self.episodes, STEP, seed=4)
        self.assertEqual(again.meta["dataset"], report.meta["dataset"])

    def test_no_episodes(self):
        with self.assertRaises(DatasetError):
            evaluate(GeodesicOracleAgent, self.scenes, [], STEP)

    def test_policy_agent(self):
        reach = ReachabilityNet(ReachabilityConfig(views=2, rays=8, encoder_hidden=8, embedding=8,
                                                   comparator_hidden=8))
        net = PolicyNet(PolicyConfig(views=2, rays=8, view_hidden=8, view_features=4, hidden=8, action_embedding=4,
                                     memory_dim=8, attention_layers=1, attention_heads=2, use_long_term=True))
        cfg = StepConfig(max_steps=5, render=STEP.render)
        factory = lambda: PolicyAgent(net, reach, MemoryConfig(capacity=3, long_term_capacity=3))
        first = evaluate(factory, self.scenes, self.episodes[:3], cfg, seed=1, record_trajectories=True)
        second = evaluate(factory, self.scenes, self.episodes[:3], cfg, seed=1)
        self.assertEqual([r.steps for r in first.results], [r.steps for r in second.results])
        self.assertTrue(first.results[0].trajectory[0]["inserted_memory"])

    def test_memory_policy_needs_reachability(self):
        with self.assertRaises(ValueError):
            PolicyAgent(PolicyNet(PolicyConfig(views=2, rays=8, hidden=8, attention_heads=2)))


class TestAblation(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.runs = {
            "baseline": [report_dict(0, 0.4, 0.3), report_dict(1, 0.6, 0.5)],
            "memory": [report_dict(0, 0.8, 0.6), report_dict(1, 0.6, 0.4)],
        }

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_rows(self):
        report = ablation_report(self.runs)
        self.assertEqual(report["baseline"], "baseline")
        self.assertEqual(report["difficulties"], ["easy", "overall"])
        rows = {(r["arm"], r["difficulty"]): r for r in report["rows"]}
        memory = rows[("memory", "overall")]
        self.assertAlmostEqual(memory["success_mean"], 0.7)
        self.assertAlmostEqual(memory["success_min"], 0.6)
        self.assertAlmostEqual(memory["success_max"], 0.8)
        self.assertAlmostEqual(memory["success_diff"], 0.2)
        self.assertAlmostEqual(memory["spl_diff"], 0.1)
        self.assertEqual(rows[("baseline", "easy")]["spl_diff"], 0.0)

    def test_seed_mismatch(self):
        self.runs["memory"][1] = report_dict(2, 0.6, 0.4)
        with self.assertRaises(DatasetError):
            ablation_report(self.runs)

    def test_dataset_mismatch(self):
        self.runs["memory"] = [report_dict(0, 0.8, 0.6, "xyz"), report_dict(1, 0.6, 0.4, "xyz")]
        with self.assertRaises(DatasetError):
            ablation_report(self.runs)

    def test_no_arms(self):
        with self.assertRaises(DatasetError):
            ablation_report({})

    def test_write(self):
        csv_path, json_path = write_ablation(Path(self.test_dir), ablation_report(self.runs))
        rows = storage.read_csv(csv_path)
        self.assertEqual(len(rows), 4)
        self.assertEqual(storage.read_json(json_path)["arms"], ["baseline", "memory"])


if __name__ == "__main__":
    unittest.main()
