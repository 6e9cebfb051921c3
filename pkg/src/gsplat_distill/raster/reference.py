"""Naive per-pixel renderer: no tiling, no early exit, a full depth sort per pixel.

Slow by design; it exists as an oracle for the tiled kernels.
"""

from __future__ import annotations

import numpy as np

from ..scene import Camera, GaussianCloud, RenderSettings
from .ops import composite, pixel_alpha, project_gaussian


def reference_render(cloud: GaussianCloud, camera: Camera, settings: RenderSettings = RenderSettings()) -> np.ndarray:
    projected = []
    for i in range(len(cloud)):
        g = cloud[i]
        q = g.rotation / np.linalg.norm(g.rotation)
        m = _rotmat(q) * g.scale[None, :]
        p = project_gaussian(m @ m.T, g.position, camera, g.opacity, g.color, index=i, near=settings.near)
        if not p.culled:
            projected.append(p)
    image = np.empty((camera.height, camera.width, 3))
    for row in range(camera.height):
        for col in range(camera.width):
            u = (col + 0.5, row + 0.5)
            hits = [(p.depth, p.index, pixel_alpha(p, u, settings), p.color) for p in projected]
            hits.sort(key=lambda h: (h[0], h[1]))
            image[row, col] = composite(
                [(a, c) for _, _, a, c in hits], settings.background, transmittance_min=0.0
            )
    return image


def _rotmat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
