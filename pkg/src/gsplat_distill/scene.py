"""Gaussian clouds, cameras and render settings."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

GREY = (0.5, 0.5, 0.5)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions in (w, x, y, z) order, shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    r[..., 0, 1] = 2.0 * (x * y - w * z)
    r[..., 0, 2] = 2.0 * (x * z + w * y)
    r[..., 1, 0] = 2.0 * (x * y + w * z)
    r[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    r[..., 1, 2] = 2.0 * (y * z - w * x)
    r[..., 2, 0] = 2.0 * (x * z - w * y)
    r[..., 2, 1] = 2.0 * (y * z + w * x)
    r[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return r


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, (w, x, y, z) order, broadcasting."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def axis_angle_quat(axis: Sequence[float], angle_deg: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = math.radians(angle_deg) / 2.0
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


@dataclass
class Gaussian3D:
    """One primitive in stored parameterization (log-scale, opacity logit)."""

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    color: np.ndarray

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


@dataclass
class GaussianCloud:
    """Structure-of-arrays Gaussian scene.

    ``grad_accum``/``grad_count`` collect per-Gaussian positional gradient
    magnitudes between densification events.
    """

    positions: np.ndarray  # (N, 3)
    log_scales: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4), w x y z
    opacity_logits: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)
    step: int = 0
    grad_accum: np.ndarray | None = None
    grad_count: np.ndarray | None = None

    PARAMS = ("positions", "log_scales", "rotations", "opacity_logits", "colors")

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        if self.grad_accum is None:
            self.grad_accum = np.zeros(n)
        if self.grad_count is None:
            self.grad_count = np.zeros(n, dtype=np.int64)
        if len(self.grad_accum) != n or len(self.grad_count) != n:
            raise ValueError("gradient accumulators must match the Gaussian count")

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            self.positions[i].copy(),
            self.log_scales[i].copy(),
            self.rotations[i].copy(),
            float(self.opacity_logits[i]),
            self.colors[i].copy(),
        )

    @classmethod
    def empty(cls) -> "GaussianCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)))

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian3D], step: int = 0) -> "GaussianCloud":
        if not gaussians:
            return cls.empty()
        return cls(
            np.stack([g.position for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.array([g.opacity_logit for g in gaussians]),
            np.stack([g.color for g in gaussians]),
            step=step,
        )

    @classmethod
    def from_activated(cls, positions, scales, rotations, opacities, colors) -> "GaussianCloud":
        """Build from activated values (positive scales, opacities in (0, 1))."""
        rotations = np.asarray(rotations, dtype=np.float64)
        rotations = rotations / np.linalg.norm(rotations, axis=-1, keepdims=True)
        return cls(
            np.asarray(positions, dtype=np.float64),
            np.log(np.asarray(scales, dtype=np.float64)),
            rotations,
            logit(opacities),
            np.asarray(colors, dtype=np.float64),
        )

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAMS}

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.positions.copy(),
            self.log_scales.copy(),
            self.rotations.copy(),
            self.opacity_logits.copy(),
            self.colors.copy(),
            step=self.step,
            grad_accum=self.grad_accum.copy(),
            grad_count=self.grad_count.copy(),
        )

    def with_params(self, **arrays) -> "GaussianCloud":
        out = self.copy()
        for name, value in arrays.items():
            if name not in self.PARAMS:
                raise KeyError(name)
            setattr(out, name, np.asarray(value, dtype=np.float64))
        return out

    def select(self, index) -> "GaussianCloud":
        """Subset (boolean mask or integer index array), accumulators included."""
        return GaussianCloud(
            self.positions[index],
            self.log_scales[index],
            self.rotations[index],
            self.opacity_logits[index],
            self.colors[index],
            step=self.step,
            grad_accum=self.grad_accum[index],
            grad_count=self.grad_count[index],
        )

    def normalize_rotations(self) -> None:
        self.rotations /= np.linalg.norm(self.rotations, axis=1, keepdims=True)

    def equals(self, other: "GaussianCloud") -> bool:
        """Bitwise equality of all optimizable fields."""
        return len(self) == len(other) and all(
            np.array_equal(a, b) for a, b in zip(self.params().values(), other.params().values())
        )


def nearest_neighbor_scale(positions: np.ndarray, k: int = 3, fallback: float = 0.01) -> np.ndarray:
    """Mean distance from each point to its ``k`` nearest neighbours."""
    n = len(positions)
    if n < 2:
        return np.full(n, fallback)
    kk = min(k, n - 1)
    dist, _ = cKDTree(positions).query(positions, k=kk + 1)
    d = dist[:, 1:].mean(axis=1)
    return np.maximum(d, 1e-7)


def init_sphere_cloud(
    count: int,
    radius: float = 0.5,
    opacity: float = 0.1,
    color: Sequence[float] = GREY,
    seed: int = 0,
) -> GaussianCloud:
    """Uniform-in-ball initialization with isotropic nearest-neighbour scales."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    if not 0.0 < opacity < 1.0:
        raise ValueError(f"opacity must lie in (0, 1), got {opacity}")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal((count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / 3.0)
    positions = direction * r[:, None]
    scale = nearest_neighbor_scale(positions, fallback=0.1 * radius)
    rotations = np.zeros((count, 4))
    rotations[:, 0] = 1.0
    return GaussianCloud(
        positions,
        np.repeat(np.log(scale)[:, None], 3, axis=1),
        rotations,
        np.full(count, float(logit(opacity))),
        np.tile(np.asarray(color, dtype=np.float64), (count, 1)),
    )


@dataclass(frozen=True)
class Camera:
    """Perspective pinhole camera on a sphere, looking at the origin, y-up world.

    View space is x right, y down, z forward; the principal point sits at the
    image centre and pixel ``(row i, col j)`` has its centre at ``(j + .5, i + .5)``.
    """

    azimuth: float
    elevation: float
    radius: float = 1.0
    fov_y: float = 50.0
    width: int = 64
    height: int = 64

    @property
    def center(self) -> np.ndarray:
        az, el = math.radians(self.azimuth), math.radians(self.elevation)
        return self.radius * np.array(
            [math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)]
        )

    @property
    def rotation(self) -> np.ndarray:
        """World-to-view rotation; rows are right, down, forward."""
        c = self.center
        forward = -c / np.linalg.norm(c)
        up = np.array([0.0, 1.0, 0.0])
        if abs(forward @ up) > 1.0 - 1e-12:
            up = np.array([0.0, 0.0, -1.0 if forward[1] > 0 else 1.0])
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        return np.stack([right, down, forward])

    @property
    def translation(self) -> np.ndarray:
        return -self.rotation @ self.center

    @property
    def view_matrix(self) -> np.ndarray:
        w = np.eye(4)
        w[:3, :3] = self.rotation
        w[:3, 3] = self.translation
        return w

    @property
    def focal(self) -> float:
        return 0.5 * self.height / math.tan(math.radians(self.fov_y) / 2.0)

    @property
    def principal_point(self) -> tuple[float, float]:
        return 0.5 * self.width, 0.5 * self.height

    def to_view(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def jacobian(self, t: np.ndarray) -> np.ndarray:
        """Perspective projection Jacobian at view-space point(s) ``t``, shape (..., 2, 3)."""
        t = np.asarray(t, dtype=np.float64)
        f = self.focal
        x, y, z = t[..., 0], t[..., 1], t[..., 2]
        j = np.zeros(t.shape[:-1] + (2, 3))
        j[..., 0, 0] = f / z
        j[..., 0, 2] = -f * x / (z * z)
        j[..., 1, 1] = f / z
        j[..., 1, 2] = -f * y / (z * z)
        return j

    def project(self, points: np.ndarray) -> np.ndarray:
        t = self.to_view(points)
        f = self.focal
        cx, cy = self.principal_point
        return np.stack([f * t[..., 0] / t[..., 2] + cx, f * t[..., 1] / t[..., 2] + cy], axis=-1)

    def with_resolution(self, width: int, height: int) -> "Camera":
        return replace(self, width=width, height=height)


@dataclass(frozen=True)
class CameraSamplerConfig:
    radius: float = 1.0
    fov_range: tuple[float, float] = (40.0, 70.0)
    azimuth_range: tuple[float, float] = (-180.0, 180.0)
    elevation_range: tuple[float, float] = (-45.0, 45.0)
    width: int = 64
    height: int = 64

    def __post_init__(self):
        for name in ("fov_range", "azimuth_range", "elevation_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min {lo} exceeds max {hi}")
        if self.radius <= 0:
            raise ValueError("radius must be positive")


def sample_camera(rng: np.random.Generator, config: CameraSamplerConfig = CameraSamplerConfig()) -> Camera:
    fov = rng.uniform(*config.fov_range)
    az = rng.uniform(*config.azimuth_range)
    el = rng.uniform(*config.elevation_range)
    return Camera(float(az), float(el), config.radius, float(fov), config.width, config.height)


@dataclass(frozen=True)
class RenderSettings:
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    alpha_min: float = 1.0 / 255.0
    extent_sigma: float = 3.0
    tile_size: int = 16
    alpha_max: float = 0.99
    cov2d_blur: float = 0.3
    transmittance_min: float = 1e-4
    near: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.alpha_min < 1.0:
            raise ValueError("alpha_min must lie in (0, 1)")
        if self.extent_sigma <= 0:
            raise ValueError("extent_sigma must be positive")
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")

    def with_background(self, background) -> "RenderSettings":
        return replace(self, background=tuple(float(b) for b in background))


# smooth settings for finite-difference checks: cutoffs pushed where their jumps are negligible
GRADCHECK_SETTINGS = RenderSettings(background=(0.0, 0.0, 0.0), alpha_min=1e-12, extent_sigma=8.0)


from .plyio import load_cloud, save_cloud  # noqa: E402

__all__ = [
    "Camera",
    "CameraSamplerConfig",
    "Gaussian3D",
    "GaussianCloud",
    "RenderSettings",
    "GRADCHECK_SETTINGS",
    "init_sphere_cloud",
    "load_cloud",
    "sample_camera",
    "save_cloud",
]
