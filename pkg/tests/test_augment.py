"""
Unit tests for observation augmentation.
"""

import unittest
import sys
from pathlib import Path

import numpy as np

# Add the parent directory to the path so we can import from src
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.tools.navigation.augment import (
    AugmentConfig, augment_observation, color_jitter_strip, crop_window, random_crop_strip, resample,
)
from src.tools.navigation.errors import ConfigError


def make_obs(seed=0, views=4, rays=16):
    return np.random.default_rng(seed).uniform(size=(views, 4, rays))


class TestCropWindow(unittest.TestCase):

    def test_window_inside_strip(self):
        for scale in (0.5, 0.8, 1.0):
            for draw in (0.0, 0.3, 0.999):
                start, length = crop_window(32, scale, draw)
                self.assertGreaterEqual(start, 0)
                self.assertLessEqual(start + length, 32)
                self.assertGreaterEqual(length, 2)

    def test_full_scale_is_whole_strip(self):
        self.assertEqual(crop_window(32, 1.0, 0.7), (0, 32))

    def test_last_offset(self):
        self.assertEqual(crop_window(32, 0.5, 0.999), (16, 16))


class TestResample(unittest.TestCase):

    def test_endpoints_kept(self):
        window = np.array([[0.0, 1.0, 4.0, 9.0, 16.0]])
        out = resample(window, 9)
        self.assertEqual(out.shape, (1, 9))
        self.assertEqual(out[0, 0], 0.0)
        self.assertEqual(out[0, -1], 16.0)

    def test_linear_ramp_stays_linear(self):
        out = resample(np.array([np.linspace(0.0, 1.0, 5)]), 11)
        np.testing.assert_allclose(out[0], np.linspace(0.0, 1.0, 11))

    def test_same_width_copies(self):
        window = np.ones((2, 4))
        out = resample(window, 4)
        out[0, 0] = 5.0
        self.assertEqual(window[0, 0], 1.0)


class TestStripAugmentations(unittest.TestCase):

    def test_crop_shares_window_across_channels(self):
        ramp = np.linspace(0.0, 1.0, 16)
        strip = np.stack([ramp, 0.5 * ramp, 0.25 * ramp, ramp])
        out = random_crop_strip(strip, 0.5, np.random.default_rng(3))
        np.testing.assert_allclose(out[1], 0.5 * out[0])
        np.testing.assert_allclose(out[3], out[0])

    def test_crop_needs_rays(self):
        with self.assertRaises(ConfigError):
            random_crop_strip(np.zeros((4, 3)), 0.8, np.random.default_rng(0))

    def test_jitter_leaves_depth(self):
        strip = make_obs()[0]
        out = color_jitter_strip(strip, 0.5, np.random.default_rng(1))
        np.testing.assert_array_equal(out[3], strip[3])
        self.assertGreaterEqual(out[:3].min(), 0.0)
        self.assertLessEqual(out[:3].max(), 1.0)

    def test_zero_strength_is_identity(self):
        strip = make_obs()[0]
        np.testing.assert_array_equal(color_jitter_strip(strip, 0.0, np.random.default_rng(1)), strip)


def linear_resample(row, width):
    """Two-tap interpolation written out per output sample."""
    length = len(row)
    out = np.empty(width)
    for j in range(width):
        pos = j * (length - 1) / (width - 1)
        lo = int(np.floor(pos))
        hi = min(lo + 1, length - 1)
        frac = pos - lo
        out[j] = row[lo] * (1 - frac) + row[hi] * frac
    return out


class TestAgainstReference(unittest.TestCase):

    def test_crop_matches_reference_resampler(self):
        strip = make_obs(seed=7, views=1, rays=32)[0]
        for seed in range(20):
            draws = np.random.default_rng(seed)
            scale = draws.uniform(0.8, 1.0)
            offset = draws.random()
            length = min(32, max(2, int(round(scale * 32))))
            start = min(int(np.floor(offset * (32 - length + 1))), 32 - length)
            expected = np.stack([linear_resample(row[start:start + length], 32) for row in strip])
            out = random_crop_strip(strip, 0.8, np.random.default_rng(seed))
            np.testing.assert_allclose(out, expected, atol=1e-6, rtol=0)

    def test_jitter_matches_formula(self):
        strip = make_obs(seed=8, views=1, rays=16)[0]
        for seed in range(20):
            draws = np.random.default_rng(seed)
            b = draws.uniform(0.8, 1.2)
            c = draws.uniform(0.8, 1.2)
            scaled = strip[:3] * b
            expected = np.clip(c * (scaled - scaled.mean()) + scaled.mean(), 0.0, 1.0)
            out = color_jitter_strip(strip, 0.2, np.random.default_rng(seed))
            np.testing.assert_allclose(out[:3], expected, atol=1e-7, rtol=0)
            np.testing.assert_array_equal(out[3], strip[3])

    def test_constant_strip_survives_crop(self):
        strip = np.stack([np.full(16, v) for v in (0.2, 0.4, 0.6, 0.5)])
        for seed in range(10):
            out = random_crop_strip(strip, 0.5, np.random.default_rng(seed))
            np.testing.assert_allclose(out, strip, atol=1e-12)

    def test_constant_color_stays_uniform_under_jitter(self):
        strip = np.full((4, 16), 0.5)
        for seed in range(10):
            draws = np.random.default_rng(seed)
            b = draws.uniform(0.8, 1.2)
            out = color_jitter_strip(strip, 0.2, np.random.default_rng(seed))
            np.testing.assert_allclose(out[:3], np.clip(0.5 * b, 0.0, 1.0), atol=1e-12)

    def test_parameter_sweep_stays_in_range(self):
        obs = make_obs(seed=9)
        for min_scale in (0.25, 0.5, 0.8, 1.0):
            for strength in (0.0, 0.2, 0.5, 0.9):
                cfg = AugmentConfig(crop_min_scale=min_scale, jitter_strength=strength)
                for seed in range(5):
                    log = []
                    out = augment_observation(obs, cfg, np.random.default_rng(seed), log)
                    self.assertGreaterEqual(out.min(), 0.0)
                    self.assertLessEqual(out.max(), 1.0)
                    self.assertGreaterEqual(out[:, 3].min(), obs[:, 3].min() - 1e-12)
                    self.assertLessEqual(out[:, 3].max(), obs[:, 3].max() + 1e-12)
                    for entry in log:
                        self.assertGreaterEqual(entry["length"], max(2, int(np.floor(min_scale * 16))))
                        self.assertLessEqual(entry["start"] + entry["length"], 16)
                        self.assertLessEqual(abs(entry["brightness"] - 1), strength)
                        self.assertLessEqual(abs(entry["contrast"] - 1), strength)


class TestAugmentObservation(unittest.TestCase):

    def test_disabled_returns_input(self):
        obs = make_obs()
        self.assertIs(augment_observation(obs, AugmentConfig(enabled=False), np.random.default_rng(0)), obs)

    def test_no_op_parameters(self):
        obs = make_obs()
        cfg = AugmentConfig(crop_min_scale=1.0, jitter_strength=0.0)
        np.testing.assert_array_equal(augment_observation(obs, cfg, np.random.default_rng(0)), obs)

    def test_shape_and_range(self):
        obs = make_obs()
        out = augment_observation(obs, AugmentConfig(), np.random.default_rng(0))
        self.assertEqual(out.shape, obs.shape)
        self.assertGreaterEqual(out.min(), 0.0)
        self.assertLessEqual(out.max(), 1.0)

    def test_deterministic_for_seed(self):
        obs = make_obs()
        a = augment_observation(obs, AugmentConfig(), np.random.default_rng(4))
        b = augment_observation(obs, AugmentConfig(), np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)

    def test_views_draw_independently(self):
        log = []
        augment_observation(make_obs(), AugmentConfig(), np.random.default_rng(5), log)
        self.assertEqual(len(log), 4)
        for entry in log:
            self.assertEqual(set(entry), {"scale", "start", "length", "brightness", "contrast"})
            self.assertGreaterEqual(entry["scale"], 0.8)
        self.assertEqual(len({entry["scale"] for entry in log}), 4)

    def test_validate(self):
        with self.assertRaises(ConfigError):
            AugmentConfig(crop_min_scale=0.0).validate()
        with self.assertRaises(ConfigError):
            AugmentConfig(jitter_strength=-0.1).validate()
        AugmentConfig().validate()


if __name__ == "__main__":
    unittest.main()
