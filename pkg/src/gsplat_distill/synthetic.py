"""Bundled synthetic reconstruction scene: 16 colored Gaussians, 8 target and 4 held-out views."""

from __future__ import annotations

import numpy as np

from .raster import render
from .scene import Camera, GaussianCloud, RenderSettings, axis_angle_quat, logit

SCENE_SEED = 20241
TARGET_AZIMUTHS = tuple(range(0, 360, 45))
HELDOUT_AZIMUTHS = (22.5, 112.5, 202.5, 292.5)


def synthetic_scene(count: int = 16, seed: int = SCENE_SEED) -> GaussianCloud:
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-0.25, 0.25, (count, 3))
    scales = rng.uniform(0.05, 0.12, (count, 3))
    axes = rng.standard_normal((count, 3))
    angles = rng.uniform(0.0, 180.0, count)
    rotations = np.stack([axis_angle_quat(a, t) for a, t in zip(axes, angles)])
    colors = rng.uniform(0.05, 0.95, (count, 3))
    opacity = rng.uniform(0.6, 0.9, count)
    return GaussianCloud(positions, np.log(scales), rotations, logit(opacity), colors)


def _azimuth(a: float) -> float:
    return ((a + 180.0) % 360.0) - 180.0


def target_cameras(resolution: int = 64, fov_y: float = 50.0) -> list[Camera]:
    return [
        Camera(_azimuth(a), 15.0 if i % 2 == 0 else -15.0, 1.0, fov_y, resolution, resolution)
        for i, a in enumerate(TARGET_AZIMUTHS)
    ]


def heldout_cameras(resolution: int = 64, fov_y: float = 50.0) -> list[Camera]:
    return [Camera(_azimuth(a), 0.0, 1.0, fov_y, resolution, resolution) for a in HELDOUT_AZIMUTHS]


def render_views(cloud: GaussianCloud, cameras, settings: RenderSettings = RenderSettings()):
    return [(cam, render(cloud, cam, settings).image) for cam in cameras]


def synthetic_views(resolution: int = 64, settings: RenderSettings = RenderSettings()):
    """(targets, heldout) as lists of (camera, image) pairs on a white background."""
    cloud = synthetic_scene()
    settings = settings.with_background((1.0, 1.0, 1.0))
    return (
        render_views(cloud, target_cameras(resolution), settings),
        render_views(cloud, heldout_cameras(resolution), settings),
    )
