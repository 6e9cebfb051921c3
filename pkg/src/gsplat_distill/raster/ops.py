"""Single-primitive building blocks: covariance, projection, pixel opacity, compositing.

The tiled renderer uses batched versions of the same arithmetic; the naive
reference renderer is assembled from these functions directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..scene import Camera, RenderSettings, quat_to_rotmat

QUAT_TOL = 1e-6


def build_covariance(scale: Sequence[float], quat: Sequence[float]) -> np.ndarray:
    """``R diag(s)^2 R^T`` from activated scale and a unit quaternion (w, x, y, z)."""
    q = np.asarray(quat, dtype=np.float64)
    s = np.asarray(scale, dtype=np.float64)
    if abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
        raise ValueError(f"quaternion is not unit-norm (|q| = {np.linalg.norm(q):.9g})")
    if np.any(s <= 0):
        raise ValueError("scale must be componentwise positive")
    m = quat_to_rotmat(q) * s[None, :]
    return m @ m.T


def build_covariances(scales: np.ndarray, quats: np.ndarray) -> np.ndarray:
    """Batched :func:`build_covariance` without the contract checks, shape (N, 3, 3)."""
    m = quat_to_rotmat(quats) * scales[:, None, :]
    return m @ np.swapaxes(m, -1, -2)


@dataclass(frozen=True)
class Projected2D:
    mean: np.ndarray  # pixels
    cov: np.ndarray  # 2x2, pixel^2, before the blur floor
    depth: float
    opacity: float
    color: np.ndarray
    index: int = 0
    culled: bool = False


def project_covariance(cov3d: np.ndarray, rotation: np.ndarray, jacobian: np.ndarray) -> np.ndarray:
    """``J W Sigma W^T J^T`` for a 3x3 rotation ``W`` and a 2x3 Jacobian ``J``."""
    m = np.asarray(jacobian) @ np.asarray(rotation)
    return m @ np.asarray(cov3d) @ m.T


def project_gaussian(
    cov3d: np.ndarray,
    position: Sequence[float],
    camera: Camera,
    opacity: float = 1.0,
    color: Sequence[float] = (0.0, 0.0, 0.0),
    index: int = 0,
    near: float = 0.05,
) -> Projected2D:
    """Project one Gaussian: ``J W Sigma W^T J^T`` with J taken at the view-space centre."""
    t = camera.to_view(position)
    color = np.asarray(color, dtype=np.float64)
    if t[2] < near:
        return Projected2D(np.full(2, np.nan), np.full((2, 2), np.nan), float(t[2]), opacity, color, index, True)
    cov2d = project_covariance(cov3d, camera.rotation, camera.jacobian(t))
    f = camera.focal
    cx, cy = camera.principal_point
    mean = np.array([f * t[0] / t[2] + cx, f * t[1] / t[2] + cy])
    return Projected2D(mean, cov2d, float(t[2]), float(opacity), color, index)


def pixel_alpha(proj: Projected2D, pixel: Sequence[float], settings: RenderSettings = RenderSettings()) -> float:
    """Opacity of ``proj`` at pixel coordinate ``pixel``: ``alpha * exp(-d^T S^-1 d / 2)``.

    ``S`` is the projected covariance plus the blur floor.  Returns 0 outside
    the ``extent_sigma`` ellipse or below ``alpha_min``; clamps at ``alpha_max``.
    """
    if proj.culled:
        raise ValueError("pixel_alpha on a culled Gaussian")
    m = proj.cov + settings.cov2d_blur * np.eye(2)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if not det > 0.0:
        raise ArithmeticError(f"singular projected covariance (det={det})")
    a, b, c = m[1, 1] / det, -m[0, 1] / det, m[0, 0] / det
    dx = pixel[0] - proj.mean[0]
    dy = pixel[1] - proj.mean[1]
    power = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    if power > settings.extent_sigma * settings.extent_sigma:
        return 0.0
    alpha = min(settings.alpha_max, proj.opacity * math.exp(-0.5 * power))
    if alpha < settings.alpha_min:
        return 0.0
    return alpha


def composite(
    contributions: Sequence[tuple[float, Sequence[float]]],
    background: Sequence[float],
    transmittance_min: float = 1e-4,
) -> np.ndarray:
    """Front-to-back alpha blending of ``(alpha, color)`` pairs over ``background``.

    Stops before the contribution that would push transmittance under
    ``transmittance_min``.  Zero-alpha entries are skipped.
    """
    out = np.zeros(3)
    t = 1.0
    for alpha, color in contributions:
        if alpha <= 0.0:
            continue
        next_t = t * (1.0 - alpha)
        if next_t < transmittance_min:
            break
        w = alpha * t
        out += w * np.asarray(color, dtype=np.float64)
        t = next_t
    return out + t * np.asarray(background, dtype=np.float64)
