"""View-consistent structured noise.

A frozen cloud of random Gaussians with standard-normal colors is splatted
into a view.  Blend weights do not depend on the colors, so each pixel is a
zero-mean normal with variance ``sum_i w_i^2``; dividing by its square root
yields unit-variance noise that is shared across views through the 3D source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import contribution_weights, render
from .scene import Camera, GaussianCloud, RenderSettings, logit, nearest_neighbor_scale

VARIANCE_FLOOR = 1e-4
RHO_START = 0.3
RHO_END = 0.05

# stream tags for deriving independent generators from one integer seed
_COLOR_STREAM = 0
_FALLBACK_STREAM = 1


def draw_colors(seed: int, count: int) -> np.ndarray:
    return np.random.default_rng([seed, _COLOR_STREAM]).standard_normal((count, 3))


@dataclass(frozen=True)
class NoiseField:
    cloud: GaussianCloud
    color_seed: int
    frozen: bool = True

    def __len__(self) -> int:
        return len(self.cloud)

    def resample_colors(self, seed: int) -> "NoiseField":
        """Same geometry, colors redrawn from ``seed``."""
        cloud = self.cloud.copy()
        cloud.colors = draw_colors(seed, len(cloud))
        return NoiseField(cloud, seed)


def init_noise_cloud(
    count: int = 16384,
    seed: int = 0,
    opacity: float = 0.6,
    scale_factor: float = 2.0,
    color_seed: int | None = None,
) -> NoiseField:
    """Random noise source: signed radius in [-0.5, 0.5], azimuth +-180 deg, elevation +-45 deg."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    r = rng.uniform(-0.5, 0.5, count)
    az = np.radians(rng.uniform(-180.0, 180.0, count))
    el = np.radians(rng.uniform(-45.0, 45.0, count))
    positions = r[:, None] * np.column_stack([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])
    scale = scale_factor * nearest_neighbor_scale(positions, fallback=0.05)
    rotations = np.zeros((count, 4))
    rotations[:, 0] = 1.0
    cseed = seed if color_seed is None else color_seed
    cloud = GaussianCloud(
        positions,
        np.repeat(np.log(scale)[:, None], 3, axis=1),
        rotations,
        np.full(count, float(logit(opacity))),
        draw_colors(cseed, count),
    )
    return NoiseField(cloud, cseed)


@dataclass
class NoiseImage:
    noise: np.ndarray  # (H, W, 3)
    mask: np.ndarray  # (H, W) True where the noise comes from the splatted source
    rho: float = 1.0
    variance: np.ndarray | None = None


def _noise_settings(settings: RenderSettings) -> RenderSettings:
    return settings.with_background((0.0, 0.0, 0.0))


def variance_map(field: NoiseField, camera: Camera, settings: RenderSettings = RenderSettings()) -> np.ndarray:
    """Closed-form per-pixel variance of the splatted noise; independent of colors."""
    return render(field.cloud, camera, _noise_settings(settings)).variance


def _fallback(seed: int, shape) -> np.ndarray:
    return np.random.default_rng([seed, _FALLBACK_STREAM]).standard_normal(shape)


def structured_noise(
    field: NoiseField,
    camera: Camera,
    settings: RenderSettings = RenderSettings(),
    color_seed: int | None = None,
    variance_floor: float = VARIANCE_FLOOR,
) -> NoiseImage:
    if color_seed is not None and color_seed != field.color_seed:
        field = field.resample_colors(color_seed)
    out = render(field.cloud, camera, _noise_settings(settings))
    mask = out.variance >= variance_floor
    std = np.sqrt(np.where(mask, out.variance, 1.0))
    noise = np.where(mask[..., None], out.image / std[..., None], 0.0)
    fill = _fallback(field.color_seed, noise.shape)
    noise = np.where(mask[..., None], noise, fill)
    return NoiseImage(noise, mask, 1.0, out.variance)


def structured_noise_batch(
    field: NoiseField,
    camera: Camera,
    settings: RenderSettings,
    color_seeds,
    variance_floor: float = VARIANCE_FLOOR,
):
    """Yield ``structured_noise(field, camera, settings, s).noise`` for each seed.

    Uses the sparse blend-weight matrix so the geometry is rasterized once.
    """
    weights, out = contribution_weights(field.cloud, camera, _noise_settings(settings))
    mask = out.variance >= variance_floor
    std = np.sqrt(np.where(mask, out.variance, 1.0))
    h, w = camera.height, camera.width
    for seed in color_seeds:
        seed = int(seed)
        image = (weights @ draw_colors(seed, len(field))).reshape(h, w, 3)
        noise = np.where(mask[..., None], image / std[..., None], _fallback(seed, (h, w, 3)))
        yield noise


def iid_noise(seed: int, shape) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def mix_noise(structured: NoiseImage | np.ndarray, iid_seed: int, rho: float) -> np.ndarray:
    """Variance-preserving blend ``sqrt(rho) * structured + sqrt(1 - rho) * iid``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    s = structured.noise if isinstance(structured, NoiseImage) else np.asarray(structured)
    if rho == 1.0:
        return s.copy()
    iid = iid_noise(iid_seed, s.shape)
    if rho == 0.0:
        return iid
    return math.sqrt(rho) * s + math.sqrt(1.0 - rho) * iid


def mix_schedule(step: int, total_steps: int, start: float = RHO_START, end: float = RHO_END) -> float:
    """Linear decay of the structured-noise share from ``start`` to ``end``."""
    if total_steps <= 0:
        return end
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step == total_steps:
        return end
    return start + (end - start) * step / total_steps


def pixel_correlation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel Pearson correlation across the leading (sample) axis."""
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    sab = np.sum(a * b, axis=0)
    return sab / np.sqrt(np.sum(a * a, axis=0) * np.sum(b * b, axis=0))
