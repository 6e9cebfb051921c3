"""Tiled forward renderer and its vector-Jacobian product."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import _accel
from ..scene import Camera, GaussianCloud, RenderSettings
from . import kernels_numba, kernels_numpy
from .project import ProjectedCloud, project_cloud, project_cloud_vjp


def _kernels():
    return kernels_numba if _accel.get_backend() == "numba" else kernels_numpy


@dataclass
class TileBins:
    tiles_x: int
    tiles_y: int
    ranges: np.ndarray  # (n_tiles + 1,) int64 offsets into entries
    entries: np.ndarray  # (E,) int64 Gaussian index, depth-sorted within a tile


def bin_gaussians(proj: ProjectedCloud, width: int, height: int, tile: int) -> TileBins:
    """Assign each visible Gaussian to the tiles its cutoff ellipse may touch."""
    tiles_x = -(-width // tile)
    tiles_y = -(-height // tile)
    mx, my = proj.means2d[:, 0], proj.means2d[:, 1]
    hx, hy = proj.half_extent[:, 0], proj.half_extent[:, 1]
    with np.errstate(invalid="ignore"):
        # one extra pixel each side keeps the box conservative under rounding
        x0 = np.floor(mx - hx - 0.5) - 1
        x1 = np.ceil(mx + hx - 0.5) + 1
        y0 = np.floor(my - hy - 0.5) - 1
        y1 = np.ceil(my + hy - 0.5) + 1
        ok = proj.valid & np.isfinite(x0) & np.isfinite(x1) & np.isfinite(y0) & np.isfinite(y1)
        ok &= (x1 >= 0) & (x0 <= width - 1) & (y1 >= 0) & (y0 <= height - 1)
    idx = np.nonzero(ok)[0]
    tx0 = (np.clip(x0[idx], 0, width - 1) // tile).astype(np.int64)
    tx1 = (np.clip(x1[idx], 0, width - 1) // tile).astype(np.int64)
    ty0 = (np.clip(y0[idx], 0, height - 1) // tile).astype(np.int64)
    ty1 = (np.clip(y1[idx], 0, height - 1) // tile).astype(np.int64)
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(idx)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    tile_x = tx0[owner] + local % nx[owner]
    tile_y = ty0[owner] + local // nx[owner]
    tile_id = tile_y * tiles_x + tile_x
    gid = idx[owner]
    order = np.lexsort((gid, proj.depths[gid], tile_id))
    entries = gid[order].astype(np.int64)
    ranges = np.searchsorted(tile_id[order], np.arange(tiles_x * tiles_y + 1)).astype(np.int64)
    return TileBins(tiles_x, tiles_y, ranges, entries)


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W) accumulated opacity
    variance: np.ndarray  # (H, W) sum of squared blend weights
    n_contrib: np.ndarray = field(repr=False, default=None)
    final_t: np.ndarray = field(repr=False, default=None)
    projected: ProjectedCloud | None = field(repr=False, default=None)
    bins: TileBins | None = field(repr=False, default=None)
    camera: Camera | None = field(repr=False, default=None)
    settings: RenderSettings | None = field(repr=False, default=None)


@dataclass
class CloudGradients:
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray

    FIELDS = ("positions", "log_scales", "rotations", "opacity_logits", "colors")

    @classmethod
    def zeros_like(cls, cloud: GaussianCloud) -> "CloudGradients":
        return cls(*(np.zeros_like(getattr(cloud, f)) for f in cls.FIELDS))

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f: getattr(self, f) for f in self.FIELDS}

    def __len__(self) -> int:
        return len(self.positions)

    def scaled(self, factor: float) -> "CloudGradients":
        return CloudGradients(*(factor * getattr(self, f) for f in self.FIELDS))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, f))) for f in self.FIELDS)

    def check_shapes(self, cloud: GaussianCloud) -> None:
        for f in self.FIELDS:
            if getattr(self, f).shape != getattr(cloud, f).shape:
                raise ValueError(f"gradient field {f} has shape {getattr(self, f).shape}, cloud has {getattr(cloud, f).shape}")

    def equals(self, other: "CloudGradients") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in self.FIELDS)


def render(cloud: GaussianCloud, camera: Camera, settings: RenderSettings = RenderSettings()) -> RenderOutput:
    if camera.width < 1 or camera.height < 1:
        raise ValueError(f"camera resolution must be positive, got {camera.width}x{camera.height}")
    w, h = camera.width, camera.height
    proj = project_cloud(cloud, camera, settings)
    bins = bin_gaussians(proj, w, h, settings.tile_size)
    image = np.empty((h, w, 3))
    alpha = np.empty((h, w))
    var = np.empty((h, w))
    n_contrib = np.empty((h, w), dtype=np.int64)
    final_t = np.empty((h, w))
    bg = np.asarray(settings.background, dtype=np.float64)
    _kernels().forward_tiles(
        bins.ranges,
        bins.entries,
        np.ascontiguousarray(proj.means2d),
        np.ascontiguousarray(proj.conics),
        np.ascontiguousarray(proj.opacities),
        np.ascontiguousarray(proj.colors),
        bg,
        w,
        h,
        settings.tile_size,
        bins.tiles_x,
        settings.extent_sigma**2,
        settings.alpha_min,
        settings.alpha_max,
        settings.transmittance_min,
        image,
        alpha,
        var,
        n_contrib,
        final_t,
    )
    return RenderOutput(image, alpha, var, n_contrib, final_t, proj, bins, camera, settings)


def render_backward(
    cloud: GaussianCloud,
    camera: Camera,
    settings: RenderSettings,
    grad_image: np.ndarray,
    forward: RenderOutput | None = None,
) -> CloudGradients:
    """Gradient of ``<grad_image, render(cloud).image>`` w.r.t. the stored parameters."""
    grad_image = np.asarray(grad_image, dtype=np.float64)
    if grad_image.shape != (camera.height, camera.width, 3):
        raise ValueError(f"grad_image shape {grad_image.shape} != {(camera.height, camera.width, 3)}")
    if forward is None or forward.projected is None:
        forward = render(cloud, camera, settings)
    proj, bins = forward.projected, forward.bins
    entry_grads = np.zeros((len(bins.entries), 9))
    k = _kernels()
    k.backward_tiles(
        bins.ranges,
        bins.entries,
        np.ascontiguousarray(proj.means2d),
        np.ascontiguousarray(proj.conics),
        np.ascontiguousarray(proj.opacities),
        np.ascontiguousarray(proj.colors),
        np.asarray(settings.background, dtype=np.float64),
        camera.width,
        camera.height,
        settings.tile_size,
        bins.tiles_x,
        settings.extent_sigma**2,
        settings.alpha_min,
        settings.alpha_max,
        forward.n_contrib,
        forward.final_t,
        np.ascontiguousarray(grad_image),
        entry_grads,
    )
    per_gaussian = k.reduce_entries(bins.entries, entry_grads, len(cloud))
    grads = project_cloud_vjp(proj, camera, per_gaussian)
    return CloudGradients(**grads)


def contribution_weights(cloud: GaussianCloud, camera: Camera, settings: RenderSettings):
    """Sparse (pixels x Gaussians) blend-weight matrix of a render.

    The rendered image equals ``W @ colors + (1 - alpha) * background`` per
    channel, so linear statistics of color-resampled renders need one pass.
    """
    from scipy import sparse

    out = render(cloud, camera, settings)
    h, w = camera.height, camera.width
    rows, cols, vals = _replay_weights(out, h, w)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(h * w, len(cloud))), out


def _replay_weights(out: RenderOutput, h: int, w: int):
    proj, bins, s = out.projected, out.bins, out.settings
    cutoff2 = s.extent_sigma**2
    rows, cols, vals = [], [], []
    tile = s.tile_size
    for tid in range(len(bins.ranges) - 1):
        start, end = bins.ranges[tid], bins.ranges[tid + 1]
        if start == end:
            continue
        args = kernels_numpy._tile_block(
            tid, bins.ranges, bins.entries, proj.means2d, proj.conics, proj.opacities,
            w, h, tile, bins.tiles_x, cutoff2, s.alpha_min, s.alpha_max,
        )
        _, g, py, px, _, _, _, _, alpha, keep = args
        within = np.arange(len(g))[:, None] < out.n_contrib[py, px][None, :]
        incl = keep & within
        a = np.where(incl, alpha, 0.0)
        t_before = np.vstack([np.ones((1, a.shape[1])), np.cumprod(1.0 - a, axis=0)[:-1]])
        wgt = a * t_before
        ki, pi = np.nonzero(incl)
        rows.append(py[pi] * w + px[pi])
        cols.append(g[ki])
        vals.append(wgt[ki, pi])
    if not rows:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
