"""
Unit tests for PPO: advantage estimation, the clipped surrogate, rollout
collection, the update step and a short end-to-end training run.
"""

import unittest
import tempfile
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

# Add the parent directory to the path so we can import from src
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.tools.navigation import storage
from src.tools.navigation.augment import AugmentConfig
from src.tools.navigation.errors import EpisodeDoneError, TrainingDivergedError, WorkerError
from src.tools.navigation.memory import MemoryConfig
from src.tools.navigation.policy import NULL_ACTION, PolicyConfig, PolicyNet
from src.tools.navigation.ppo_trainer import (
    PPOConfig, TrainingSetup, clipped_surrogate, collect_rollouts, compute_gae, make_workers, metrics_columns,
    ppo_loss, ppo_update, train,
)
from src.tools.navigation.reachability import ReachabilityConfig, ReachabilityNet
from src.tools.navigation.sim_world import (
    RenderConfig, SceneParams, StepConfig, generate_episode_dataset, generate_scene,
)
from src.tools.navigation.tensor_nn import Categorical, Tensor

RENDER = RenderConfig(views=2, rays=8)
STEP = StepConfig(max_steps=6, render=RENDER)
REACH = ReachabilityConfig(views=2, channels=4, rays=8, encoder_hidden=8, embedding=8, comparator_hidden=8)
POLICY = PolicyConfig(views=2, channels=4, rays=8, view_hidden=8, view_features=4, hidden=8,
                      action_embedding=4, memory_dim=8, attention_layers=1, attention_heads=2)
MEMORY = MemoryConfig(tau=0.5, capacity=4, long_term_capacity=4, log_insertions=True)


def small_world():
    scene = generate_scene(3, SceneParams(width=8.0, height=8.0, density=0.1))
    episodes = generate_episode_dataset([scene], 3, rng_seed=0, difficulties=("easy",)).episodes
    return {scene.id: scene}, episodes


def reference_gae(rewards, values, dones, bootstrap, gamma, lam):
    length, batch = rewards.shape
    next_values = np.vstack([values[1:], bootstrap[None]])
    deltas = rewards + gamma * next_values * (1 - dones) - values
    advantages = np.zeros_like(rewards)
    for b in range(batch):
        for t in range(length):
            total, factor = 0.0, 1.0
            for u in range(t, length):
                total += factor * deltas[u, b]
                if dones[u, b]:
                    break
                factor *= gamma * lam
            advantages[t, b] = total
    return advantages


class TestAdvantages(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.rewards = rng.normal(size=(12, 3))
        self.values = rng.normal(size=(12, 3))
        self.dones = rng.random(size=(12, 3)) < 0.2
        self.bootstrap = rng.normal(size=3)

    def test_matches_reference(self):
        advantages, returns = compute_gae(self.rewards, self.values, self.dones, self.bootstrap,
                                          0.99, 0.95, normalize=False)
        expected = reference_gae(self.rewards, self.values, self.dones.astype(float), self.bootstrap, 0.99, 0.95)
        np.testing.assert_allclose(advantages, expected, atol=1e-10)
        np.testing.assert_allclose(returns, expected + self.values, atol=1e-10)

    def test_normalized(self):
        advantages, returns = compute_gae(self.rewards, self.values, self.dones, self.bootstrap)
        raw, raw_returns = compute_gae(self.rewards, self.values, self.dones, self.bootstrap, normalize=False)
        self.assertAlmostEqual(float(advantages.mean()), 0.0, places=8)
        self.assertAlmostEqual(float(advantages.std()), 1.0, places=5)
        np.testing.assert_array_equal(returns, raw_returns)

    def test_terminal_step(self):
        advantages, _ = compute_gae([[1.0]], [[0.25]], [[True]], [100.0], normalize=False)
        self.assertAlmostEqual(float(advantages[0, 0]), 0.75)

    def test_bootstrap_used_when_running(self):
        advantages, _ = compute_gae([[0.0]], [[0.0]], [[False]], [2.0], gamma=0.5, normalize=False)
        self.assertAlmostEqual(float(advantages[0, 0]), 1.0)


class TestClippedSurrogate(unittest.TestCase):

    def test_positive_advantage(self):
        ratio = Tensor(np.array([0.5, 1.0, 1.5]))
        loss = clipped_surrogate(ratio, np.ones(3), 0.2)
        np.testing.assert_allclose(loss.data, [-0.5, -1.0, -1.2], rtol=1e-6)

    def test_negative_advantage(self):
        ratio = Tensor(np.array([0.5, 1.0, 1.5]))
        loss = clipped_surrogate(ratio, -np.ones(3), 0.2)
        np.testing.assert_allclose(loss.data, [0.8, 1.0, 1.5], rtol=1e-6)

    def test_clipped_side_has_no_gradient(self):
        ratio = Tensor(np.array([0.5, 1.5]), requires_grad=True)
        clipped_surrogate(ratio, np.ones(2), 0.2).sum().backward()
        np.testing.assert_allclose(ratio.grad, [-1.0, 0.0])


class TestLoss(unittest.TestCase):

    def test_flatter_policy_has_lower_loss(self):
        cfg = PPOConfig(entropy_coef=0.05)
        policy_loss, value_loss = Tensor(np.array(0.3)), Tensor(np.array(1.2))
        peaked = Categorical(Tensor(np.array([[4.0, 0.0, 0.0, 0.0]])))
        flat = Categorical(Tensor(np.array([[1.0, 0.0, 0.0, 0.0]])))
        self.assertGreater(flat.entropy().item(), peaked.entropy().item())
        high = ppo_loss(policy_loss, value_loss, peaked.entropy(), cfg).item()
        low = ppo_loss(policy_loss, value_loss, flat.entropy(), cfg).item()
        self.assertLess(low, high)
        self.assertAlmostEqual(high - low, 0.05 * (flat.entropy().item() - peaked.entropy().item()), places=5)

    def test_descent_on_entropy_term_flattens(self):
        cfg = PPOConfig(entropy_coef=1.0)
        logits = Tensor(np.array([[3.0, 0.5, -1.0, 0.0]]), requires_grad=True)
        before = Categorical(logits).entropy().item()
        ppo_loss(Tensor(np.array(0.0)), Tensor(np.array(0.0)), Categorical(logits).entropy(), cfg).backward()
        after = Categorical(Tensor(logits.data - 0.1 * logits.grad)).entropy().item()
        self.assertGreater(after, before)


class TestRollouts(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.scenes, cls.episodes = small_world()
        cls.reach = ReachabilityNet(REACH, seed=0)

    def setUp(self):
        self.net = PolicyNet(POLICY, seed=0)
        self.workers = make_workers(2, self.scenes, self.episodes, STEP, AugmentConfig(), seed=1,
                                    reach_net=self.reach, memory_cfg=MEMORY)
        self.pool = ThreadPoolExecutor(max_workers=2)

    def tearDown(self):
        self.pool.shutdown()

    def collect(self, length=8):
        return collect_rollouts(self.workers, self.net, self.net.initial_state(2), length, self.pool,
                                np.random.default_rng(0))

    def test_buffer_shapes(self):
        buffer, state = self.collect()
        self.assertEqual(buffer.obs.shape, (8, 2, 2, 4, 8))
        self.assertEqual(buffer.actions.shape, (8, 2))
        self.assertEqual(buffer.bootstrap.shape, (2,))
        self.assertEqual(len(buffer.memory_views), 8)
        self.assertEqual(buffer.memory_views[0][0].matrix.shape, (4, 8))
        self.assertEqual(buffer.transitions, 16)
        self.assertEqual(state.h.shape, (2, 2, 8))

    def test_episode_boundaries(self):
        buffer, _ = self.collect()
        # every episode ends within max_steps
        self.assertGreaterEqual(len(buffer.finished), 2)
        for t in range(7):
            np.testing.assert_array_equal(buffer.starts[t + 1], buffer.dones[t])
        for t, b in zip(*np.nonzero(buffer.starts)):
            self.assertEqual(buffer.prev_actions[t, b], NULL_ACTION)

    def test_raw_goals_recorded(self):
        goal = self.workers[0].env.goal_observation
        buffer, _ = self.collect(1)
        self.assertEqual(goal.shape, (2, 4, 8))
        np.testing.assert_array_equal(buffer.goal_obs[0, 0], goal)

    def test_insertion_log(self):
        self.collect()
        records = [r for w in self.workers for r in w.insertion_log]
        self.assertTrue(records)
        self.assertTrue(all({"worker", "episode", "inserted", "buffer_size"} <= set(r) for r in records))
        self.assertTrue(all(r["buffer_size"] <= MEMORY.capacity for r in records))

    def test_worker_failure_is_wrapped(self):
        worker = self.workers[0]
        worker.env.state = replace(worker.env.state, done=True)
        with self.assertRaises(WorkerError) as ctx:
            worker.apply(0)
        self.assertEqual(ctx.exception.worker_id, 0)
        self.assertIsInstance(ctx.exception.cause, EpisodeDoneError)
        self.assertEqual(ctx.exception.episode, worker.spec.episode_id)


class TestUpdate(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.scenes, cls.episodes = small_world()
        cls.reach = ReachabilityNet(REACH, seed=0)

    def setUp(self):
        self.net = PolicyNet(POLICY, seed=0)
        workers = make_workers(2, self.scenes, self.episodes, STEP, AugmentConfig(), seed=2,
                               reach_net=self.reach, memory_cfg=MEMORY)
        with ThreadPoolExecutor(max_workers=2) as pool:
            self.buffer, _ = collect_rollouts(workers, self.net, self.net.initial_state(2), 6, pool,
                                              np.random.default_rng(1))

    def test_zero_learning_rate_keeps_parameters(self):
        before = self.net.store.snapshot()
        stats = ppo_update(self.net, self.buffer, PPOConfig(lr=0.0, epochs=2), AugmentConfig(),
                           np.random.default_rng(0))
        for name, value in before.items():
            np.testing.assert_array_equal(self.net.store[name].data, value)
        self.assertEqual(set(stats), {"loss", "policy_loss", "value_loss", "entropy", "grad_norm",
                                      "clip_fraction", "approx_kl"})

    def test_update_moves_parameters(self):
        before = self.net.store.snapshot()
        stats = ppo_update(self.net, self.buffer, PPOConfig(lr=1e-2, epochs=1), AugmentConfig(enabled=False),
                           np.random.default_rng(0))
        self.assertTrue(any(not np.array_equal(self.net.store[n].data, v) for n, v in before.items()))
        self.assertTrue(np.isfinite(stats["loss"]))
        self.assertGreaterEqual(stats["clip_fraction"], 0.0)

    def test_divergence_restores_parameters(self):
        before = self.net.store.snapshot()
        self.buffer.rewards[0, 0] = np.nan
        with self.assertRaises(TrainingDivergedError):
            ppo_update(self.net, self.buffer, PPOConfig(), AugmentConfig(), np.random.default_rng(0))
        for name, value in before.items():
            np.testing.assert_array_equal(self.net.store[name].data, value)


class TestTrain(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        scenes, episodes = small_world()
        self.setup = TrainingSetup(scenes=scenes, train_episodes=episodes, test_episodes=episodes,
                                   step_cfg=STEP, augment_cfg=AugmentConfig(), memory_cfg=MEMORY,
                                   reach_net=ReachabilityNet(REACH, seed=0))
        self.cfg = PPOConfig(updates=2, segment=4, workers=2, epochs=1, eval_every=1, ckpt_every=1,
                             eval_episodes=2, seed=0)

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_short_run_writes_artifacts(self):
        out = Path(self.test_dir)
        summary = train(PolicyNet(POLICY, seed=0), self.setup, self.cfg, out)
        self.assertEqual(len(summary["metrics"]), 2)
        self.assertTrue(Path(summary["checkpoint"]).exists())
        self.assertTrue((out / "checkpoints" / "policy-000001.nvmc").exists())
        self.assertTrue((out / "insertions.jsonl").exists())
        rows = storage.read_csv(out / "metrics.csv")
        self.assertEqual(list(rows[0].keys()), metrics_columns(["easy"]))
        self.assertEqual(rows[1]["env_steps"], "16")
        loaded = PolicyNet.load(summary["checkpoint"])
        self.assertEqual(loaded.store.state.get("adam_t"), 2)

    def test_without_memory(self):
        net = PolicyNet(replace(POLICY, use_memory=False), seed=0)
        setup = replace(self.setup, reach_net=None)
        summary = train(net, setup, replace(self.cfg, updates=1), Path(self.test_dir))
        self.assertEqual(len(summary["metrics"]), 1)
        self.assertFalse((Path(self.test_dir) / "insertions.jsonl").exists())

    def test_memory_needs_reachability(self):
        setup = replace(self.setup, reach_net=None)
        with self.assertRaises(ValueError):
            train(PolicyNet(POLICY), setup, self.cfg, Path(self.test_dir))

    def test_invalid_config(self):
        with self.assertRaises(ValueError):
            train(PolicyNet(POLICY), self.setup, replace(self.cfg, clip=0.0), Path(self.test_dir))


if __name__ == "__main__":
    unittest.main()
