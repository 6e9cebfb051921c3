"""Denoiser-based scores and the score-distillation step."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .noise import NoiseField, iid_noise, mix_noise, structured_noise
from .raster import CloudGradients, RenderOutput, render, render_backward
from .scene import Camera, GaussianCloud, RenderSettings


@dataclass(frozen=True)
class SigmaSchedule:
    sigma_max: float = 1.0
    sigma_min: float = 0.02
    total_steps: int = 2000

    def __post_init__(self):
        if not self.sigma_max >= self.sigma_min > 0:
            raise ValueError(f"need sigma_max >= sigma_min > 0, got {self.sigma_max}, {self.sigma_min}")


def sigma_at(schedule: SigmaSchedule, step: int) -> float:
    """Geometric interpolation from ``sigma_max`` (step 0) to ``sigma_min`` (last step)."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if step == 0 or schedule.total_steps == 0:
        return schedule.sigma_max
    if step == schedule.total_steps:
        return schedule.sigma_min
    frac = step / schedule.total_steps
    return schedule.sigma_max * (schedule.sigma_min / schedule.sigma_max) ** frac


class ScoreProvider(Protocol):
    def denoise(
        self, x: np.ndarray, sigma: float, camera: Camera | None = None, rng: np.random.Generator | None = None
    ) -> np.ndarray: ...


class IdentityDenoiser:
    """``D(x) = x``: every score is zero."""

    def denoise(self, x, sigma, camera=None, rng=None):
        return np.array(x, dtype=np.float64, copy=True)


class ConstantDenoiser:
    def __init__(self, target: np.ndarray):
        self.target = np.asarray(target, dtype=np.float64)

    def denoise(self, x, sigma, camera=None, rng=None):
        if np.shape(x) != self.target.shape:
            raise ValueError(f"input shape {np.shape(x)} != target shape {self.target.shape}")
        return self.target.copy()


def great_circle_deg(a: Camera, b: Camera) -> float:
    az1, el1, az2, el2 = map(math.radians, (a.azimuth, a.elevation, b.azimuth, b.elevation))
    c = math.sin(el1) * math.sin(el2) + math.cos(el1) * math.cos(el2) * math.cos(az1 - az2)
    return math.degrees(math.acos(max(-1.0, min(1.0, c))))


class TargetViewDenoiser:
    """Returns the stored image of the nearest stored camera.

    With ``prior_std > 0`` it is the exact posterior mean for a Gaussian prior
    ``N(target, prior_std^2)``: ``t + prior_std^2 / (prior_std^2 + sigma^2) (x - t)``,
    which lets part of the input noise through the way a trained denoiser would.
    """

    def __init__(self, views: Sequence[tuple[Camera, np.ndarray]], prior_std: float = 0.0):
        if not views:
            raise ValueError("TargetViewDenoiser needs at least one view")
        if prior_std < 0:
            raise ValueError("prior_std must be >= 0")
        self.cameras = [c for c, _ in views]
        self.images = [np.asarray(img, dtype=np.float64) for _, img in views]
        self.prior_std = prior_std

    def __len__(self) -> int:
        return len(self.cameras)

    def nearest(self, camera: Camera) -> int:
        dists = [great_circle_deg(camera, c) for c in self.cameras]
        return int(np.argmin(dists))  # argmin returns the lowest index on ties

    def denoise(self, x, sigma, camera=None, rng=None):
        if camera is None:
            raise ValueError("TargetViewDenoiser needs the camera of the input")
        target = self.images[self.nearest(camera)]
        if np.shape(x) != target.shape:
            raise ValueError(f"input shape {np.shape(x)} != target shape {target.shape}")
        if self.prior_std == 0.0:
            return target.copy()
        k = self.prior_std**2 / (self.prior_std**2 + sigma**2)
        return target + k * (np.asarray(x) - target)


def score_from_denoiser(
    x: np.ndarray,
    sigma: float,
    provider: ScoreProvider,
    camera: Camera | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Score estimate ``(D(x; sigma) - x) / sigma^2``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    return (provider.denoise(x, sigma, camera, rng) - x) / (sigma * sigma)


def perturb_render(x: np.ndarray, noise: np.ndarray, sigma: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.shape(noise) != x.shape:
        raise ValueError(f"noise shape {np.shape(noise)} != image shape {x.shape}")
    return x + sigma * np.asarray(noise)


@dataclass
class GuidanceStepReport:
    sigma: float
    rho: float
    score_norm: float
    camera: Camera
    elapsed: float
    forward: RenderOutput | None = field(default=None, repr=False)


def build_noise(
    field_: NoiseField | None,
    camera: Camera,
    settings: RenderSettings,
    rho: float,
    color_seed: int,
    iid_seed: int,
    resample_colors: bool = True,
) -> np.ndarray:
    shape = (camera.height, camera.width, 3)
    if field_ is None or rho == 0.0:
        # identical to mix_noise(..., rho=0): skip rasterizing the noise cloud
        return iid_noise(iid_seed, shape)
    img = structured_noise(field_, camera, settings, color_seed if resample_colors else None)
    return mix_noise(img, iid_seed, rho)


def distill_step(
    cloud: GaussianCloud,
    camera: Camera,
    field_: NoiseField | None,
    provider: ScoreProvider,
    sigma: float,
    rho: float,
    settings: RenderSettings,
    rng: np.random.Generator,
    resample_colors: bool = True,
) -> tuple[CloudGradients, GuidanceStepReport]:
    """One single-camera estimate of the 3D score (an ascent direction).

    The score is evaluated at the perturbed render ``x + sigma * n`` and
    pulled back through the clean render's vector-Jacobian product.
    """
    start = time.perf_counter()
    color_seed, iid_seed = (int(s) for s in rng.integers(0, 2**63 - 1, size=2))
    fwd = render(cloud, camera, settings)
    x = fwd.image
    n = build_noise(field_, camera, settings, rho, color_seed, iid_seed, resample_colors)
    noisy = perturb_render(x, n, sigma)
    denoised = provider.denoise(noisy, sigma, camera, rng)
    score = (denoised - noisy) / (sigma * sigma)
    grads = render_backward(cloud, camera, settings, score, forward=fwd)
    report = GuidanceStepReport(
        sigma=float(sigma),
        rho=float(rho),
        score_norm=float(np.linalg.norm(score)),
        camera=camera,
        elapsed=time.perf_counter() - start,
        forward=fwd,
    )
    return grads, report
