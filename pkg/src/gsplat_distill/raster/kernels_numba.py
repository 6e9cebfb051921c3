"""Per-pixel compositing kernels compiled with numba.

Tiles run in parallel; every write targets either a pixel owned by the tile or
an entry slot owned by the tile, so results do not depend on thread count.
"""

from __future__ import annotations

import math

import numpy as np

from .._accel import njit, prange


@njit(cache=True, parallel=True)
def forward_tiles(
    tile_ranges,
    entries,
    means,
    conics,
    opac,
    colors,
    bg,
    width,
    height,
    tile,
    tiles_x,
    cutoff2,
    alpha_min,
    alpha_max,
    t_min,
    image,
    alpha_out,
    var_out,
    n_contrib,
    final_t,
):
    n_tiles = len(tile_ranges) - 1
    for tid in prange(n_tiles):
        start = tile_ranges[tid]
        end = tile_ranges[tid + 1]
        ty0 = (tid // tiles_x) * tile
        tx0 = (tid % tiles_x) * tile
        for py in range(ty0, min(ty0 + tile, height)):
            for px in range(tx0, min(tx0 + tile, width)):
                fx = px + 0.5
                fy = py + 0.5
                t = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                var = 0.0
                stop = end - start
                for k in range(start, end):
                    g = entries[k]
                    dx = fx - means[g, 0]
                    dy = fy - means[g, 1]
                    power = conics[g, 0] * dx * dx + 2.0 * conics[g, 1] * dx * dy + conics[g, 2] * dy * dy
                    if power > cutoff2:
                        continue
                    alpha = min(alpha_max, opac[g] * math.exp(-0.5 * power))
                    if alpha < alpha_min:
                        continue
                    next_t = t * (1.0 - alpha)
                    if next_t < t_min:
                        stop = k - start
                        break
                    w = alpha * t
                    c0 += w * colors[g, 0]
                    c1 += w * colors[g, 1]
                    c2 += w * colors[g, 2]
                    var += w * w
                    t = next_t
                image[py, px, 0] = c0 + t * bg[0]
                image[py, px, 1] = c1 + t * bg[1]
                image[py, px, 2] = c2 + t * bg[2]
                alpha_out[py, px] = 1.0 - t
                var_out[py, px] = var
                n_contrib[py, px] = stop
                final_t[py, px] = t


@njit(cache=True, parallel=True)
def backward_tiles(
    tile_ranges,
    entries,
    means,
    conics,
    opac,
    colors,
    bg,
    width,
    height,
    tile,
    tiles_x,
    cutoff2,
    alpha_min,
    alpha_max,
    n_contrib,
    final_t,
    grad_image,
    entry_grads,
):
    n_tiles = len(tile_ranges) - 1
    for tid in prange(n_tiles):
        start = tile_ranges[tid]
        end = tile_ranges[tid + 1]
        if end == start:
            continue
        ty0 = (tid // tiles_x) * tile
        tx0 = (tid % tiles_x) * tile
        ks = np.empty(end - start, dtype=np.int64)
        alphas = np.empty(end - start)
        ts = np.empty(end - start)
        gauss = np.empty(end - start)
        clamped = np.empty(end - start, dtype=np.bool_)
        for py in range(ty0, min(ty0 + tile, height)):
            for px in range(tx0, min(tx0 + tile, width)):
                gr = grad_image[py, px, 0]
                gg = grad_image[py, px, 1]
                gb = grad_image[py, px, 2]
                if gr == 0.0 and gg == 0.0 and gb == 0.0:
                    continue
                fx = px + 0.5
                fy = py + 0.5
                # replay the forward walk to recover the included set
                t = 1.0
                m = 0
                for k in range(start, start + n_contrib[py, px]):
                    g = entries[k]
                    dx = fx - means[g, 0]
                    dy = fy - means[g, 1]
                    power = conics[g, 0] * dx * dx + 2.0 * conics[g, 1] * dx * dy + conics[g, 2] * dy * dy
                    if power > cutoff2:
                        continue
                    gval = math.exp(-0.5 * power)
                    raw = opac[g] * gval
                    alpha = min(alpha_max, raw)
                    if alpha < alpha_min:
                        continue
                    ks[m] = k
                    alphas[m] = alpha
                    ts[m] = t
                    gauss[m] = gval
                    clamped[m] = raw > alpha_max
                    m += 1
                    t = t * (1.0 - alpha)
                tf = final_t[py, px]
                acc0 = tf * bg[0]
                acc1 = tf * bg[1]
                acc2 = tf * bg[2]
                for i in range(m - 1, -1, -1):
                    k = ks[i]
                    g = entries[k]
                    alpha = alphas[i]
                    t = ts[i]
                    w = alpha * t
                    entry_grads[k, 6] += w * gr
                    entry_grads[k, 7] += w * gg
                    entry_grads[k, 8] += w * gb
                    dalpha = t * (colors[g, 0] * gr + colors[g, 1] * gg + colors[g, 2] * gb) - (
                        acc0 * gr + acc1 * gg + acc2 * gb
                    ) / (1.0 - alpha)
                    acc0 += w * colors[g, 0]
                    acc1 += w * colors[g, 1]
                    acc2 += w * colors[g, 2]
                    if clamped[i]:
                        continue
                    entry_grads[k, 5] += dalpha * gauss[i]
                    dpower = -0.5 * dalpha * alpha
                    dx = fx - means[g, 0]
                    dy = fy - means[g, 1]
                    entry_grads[k, 0] += -dpower * (2.0 * conics[g, 0] * dx + 2.0 * conics[g, 1] * dy)
                    entry_grads[k, 1] += -dpower * (2.0 * conics[g, 1] * dx + 2.0 * conics[g, 2] * dy)
                    entry_grads[k, 2] += dpower * dx * dx
                    entry_grads[k, 3] += dpower * 2.0 * dx * dy
                    entry_grads[k, 4] += dpower * dy * dy


@njit(cache=True)
def reduce_entries(entries, entry_grads, n_gaussians):
    out = np.zeros((n_gaussians, entry_grads.shape[1]))
    for k in range(len(entries)):
        g = entries[k]
        for j in range(entry_grads.shape[1]):
            out[g, j] += entry_grads[k, j]
    return out
