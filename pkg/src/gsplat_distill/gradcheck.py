"""Finite-difference checks for the rasterizer and the VGS pass-through."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import CloudGradients, render, render_backward
from .scene import GRADCHECK_SETTINGS, Camera, GaussianCloud, RenderSettings
from .vgs import VGSConfig, passthrough_gradients, perturb

FIELDS = CloudGradients.FIELDS


def random_scene(rng: np.random.Generator, count: int | None = None, max_count: int = 8) -> GaussianCloud:
    """Small random scene inside the unit sphere.

    Opacities stay below 0.6 and depths are separated so that no alpha clamp,
    early exit or depth swap sits inside a finite-difference stencil.
    """
    n = int(rng.integers(1, max_count + 1)) if count is None else count
    pos = rng.uniform(-0.25, 0.25, (n, 3))
    scales = rng.uniform(0.04, 0.12, (n, 3))
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    op = rng.uniform(0.1, 0.6, n)
    col = rng.uniform(0.0, 1.0, (n, 3))
    return GaussianCloud.from_activated(pos, scales, q, op, col)


def random_camera(rng: np.random.Generator, size: int = 16) -> Camera:
    return Camera(float(rng.uniform(-180, 180)), float(rng.uniform(-45, 45)), 1.0, float(rng.uniform(40, 70)), size, size)


def depths_separated(cloud: GaussianCloud, camera: Camera, gap: float = 1e-3) -> bool:
    d = np.sort(camera.to_view(cloud.positions)[:, 2])
    return bool(np.all(np.diff(d) > gap))


def finite_difference(loss, cloud: GaussianCloud, name: str, h: float = 1e-4) -> np.ndarray:
    arr = getattr(cloud, name)
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        a = arr.copy()
        a[idx] += h
        lp = loss(cloud.with_params(**{name: a}))
        a[idx] -= 2 * h
        lm = loss(cloud.with_params(**{name: a}))
        out[idx] = (lp - lm) / (2 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max abs difference over the largest reference magnitude of the class."""
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


@dataclass
class GradcheckResult:
    errors: dict[str, float]
    scenes: int

    def passed(self, tol: float) -> bool:
        return all(e < tol for e in self.errors.values())


def check_scene(cloud, camera, cotangent, settings: RenderSettings = GRADCHECK_SETTINGS, h: float = 1e-4) -> dict[str, float]:
    def loss(c):
        return float(np.sum(render(c, camera, settings).image * cotangent))

    grads = render_backward(cloud, camera, settings, cotangent)
    return {f: relative_error(getattr(grads, f), finite_difference(loss, cloud, f, h)) for f in FIELDS}


def _draw_case(rng, size, max_count):
    while True:
        cloud = random_scene(rng, max_count=max_count)
        camera = random_camera(rng, size)
        if depths_separated(cloud, camera):
            break
    bg = rng.uniform(0.0, 1.0, 3)
    cot = rng.standard_normal((size, size, 3))
    return cloud, camera, cot, GRADCHECK_SETTINGS.with_background(bg)


def rasterizer_suite(scenes: int = 20, seed: int = 0, size: int = 16, max_count: int = 8, h: float = 1e-4) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(FIELDS, 0.0)
    for _ in range(scenes):
        cloud, camera, cot, settings = _draw_case(rng, size, max_count)
        for f, e in check_scene(cloud, camera, cot, settings, h).items():
            worst[f] = max(worst[f], e)
    return GradcheckResult(worst, scenes)


def vgs_suite(
    scenes: int = 5, seed: int = 1, size: int = 16, max_count: int = 8, sigma: float = 0.5, gamma: float = 0.15, h: float = 1e-4
) -> GradcheckResult:
    """d<g, render(theta + sigma*gamma*eps0)>/d theta against the pass-through gradient."""
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(FIELDS, 0.0)
    config = VGSConfig(True, gamma)
    done = 0
    while done < scenes:
        cloud, camera, cot, settings = _draw_case(rng, size, max_count)
        eps_seed = int(rng.integers(0, 2**31))
        perturbed, record = perturb(cloud, sigma, config, eps_seed)
        if not depths_separated(perturbed, camera):
            continue

        def loss(c):
            p = c.with_params(positions=c.positions + record.position_offsets, log_scales=c.log_scales + record.scale_offsets)
            return float(np.sum(render(p, camera, settings).image * cot))

        grads = passthrough_gradients(render_backward(perturbed, camera, settings, cot), cloud)
        for f in FIELDS:
            worst[f] = max(worst[f], relative_error(getattr(grads, f), finite_difference(loss, cloud, f, h)))
        done += 1
    return GradcheckResult(worst, scenes)


def zero_cotangent_max(seed: int = 2, size: int = 16) -> float:
    """Largest gradient magnitude produced by an all-zero cotangent (should be exactly 0)."""
    rng = np.random.default_rng(seed)
    cloud, camera, _, settings = _draw_case(rng, size, 8)
    grads = render_backward(cloud, camera, settings, np.zeros((size, size, 3)))
    return max(float(np.max(np.abs(getattr(grads, f)), initial=0.0)) for f in FIELDS)
