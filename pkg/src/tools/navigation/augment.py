"""
Observation augmentation for ray strips: random crop-and-resample along the
ray axis and brightness/contrast jitter on the color channels. Every view of a
panorama draws its own parameters.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError


COLOR_CHANNELS = 3


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    crop_min_scale: float = 0.8
    jitter_strength: float = 0.2

    def validate(self) -> None:
        if not 0 < self.crop_min_scale <= 1:
            raise ConfigError(f"augment.crop_min_scale must lie in (0, 1], got {self.crop_min_scale}")
        if self.jitter_strength < 0:
            raise ConfigError(f"augment.jitter_strength must be >= 0, got {self.jitter_strength}")


def crop_window(width: int, scale: float, offset_draw: float) -> tuple:
    """Start index and length of the crop window for a given scale and a U[0,1) draw."""
    length = min(width, max(2, int(round(scale * width))))
    start = int(np.floor(offset_draw * (width - length + 1)))
    return min(start, width - length), length


def resample(window: np.ndarray, width: int) -> np.ndarray:
    """Linearly resample the last axis of `window` to `width` samples, endpoints kept."""
    length = window.shape[-1]
    if length == width:
        return window.copy()
    positions = np.arange(width) * (length - 1) / (width - 1)
    source = np.arange(length)
    return np.stack([np.interp(positions, source, row) for row in window])


def random_crop_strip(strip: np.ndarray, min_scale: float, rng: np.random.Generator,
                      draw_log: Optional[list] = None) -> np.ndarray:
    """Crop a contiguous ray window (same for every channel) and stretch it back to W."""
    width = strip.shape[-1]
    if width < 4:
        raise ConfigError(f"cropping needs at least 4 rays, got {width}")
    scale = rng.uniform(min_scale, 1.0)
    start, length = crop_window(width, scale, rng.random())
    if draw_log is not None:
        draw_log.append({"scale": scale, "start": start, "length": length})
    return resample(strip[:, start:start + length], width)


def color_jitter_strip(strip: np.ndarray, strength: float, rng: np.random.Generator,
                       draw_log: Optional[list] = None) -> np.ndarray:
    """Brightness then contrast about the color mean; the depth channel is left alone."""
    brightness = rng.uniform(1 - strength, 1 + strength)
    contrast = rng.uniform(1 - strength, 1 + strength)
    if draw_log is not None:
        draw_log.append({"brightness": brightness, "contrast": contrast})
    out = strip.copy()
    if brightness == 1.0 and contrast == 1.0:
        return out
    color = strip[:COLOR_CHANNELS] * brightness
    center = color.mean()
    out[:COLOR_CHANNELS] = np.clip(contrast * (color - center) + center, 0.0, 1.0)
    return out


def augment_observation(obs: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator,
                        draw_log: Optional[list] = None) -> np.ndarray:
    """Crop then jitter every view independently; returns the input untouched when disabled."""
    if not cfg.enabled:
        return obs
    views = []
    for strip in obs:
        view_log = [] if draw_log is not None else None
        strip = random_crop_strip(strip, cfg.crop_min_scale, rng, view_log)
        strip = color_jitter_strip(strip, cfg.jitter_strength, rng, view_log)
        if draw_log is not None:
            draw_log.append({k: v for entry in view_log for k, v in entry.items()})
        views.append(strip)
    return np.stack(views)
