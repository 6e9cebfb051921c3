"""Vectorized numpy fallback for the compositing kernels.

Same signatures and semantics as :mod:`kernels_numba`; each tile is handled as
a dense (entries x pixels) block.  Transmittance uses ``cumprod`` so products
are formed in the same order as the sequential kernels.
"""

from __future__ import annotations

import numpy as np


def _tile_block(tid, tile_ranges, entries, means, conics, opac, width, height, tile, tiles_x, cutoff2, alpha_min, alpha_max):
    start, end = tile_ranges[tid], tile_ranges[tid + 1]
    ty0 = (tid // tiles_x) * tile
    tx0 = (tid % tiles_x) * tile
    ys = np.arange(ty0, min(ty0 + tile, height))
    xs = np.arange(tx0, min(tx0 + tile, width))
    py, px = np.meshgrid(ys, xs, indexing="ij")
    py, px = py.ravel(), px.ravel()
    g = entries[start:end]
    dx = (px + 0.5)[None, :] - means[g, 0][:, None]
    dy = (py + 0.5)[None, :] - means[g, 1][:, None]
    power = conics[g, 0][:, None] * dx * dx + 2.0 * conics[g, 1][:, None] * dx * dy + conics[g, 2][:, None] * dy * dy
    gauss = np.exp(-0.5 * power)
    raw = opac[g][:, None] * gauss
    alpha = np.minimum(alpha_max, raw)
    keep = (power <= cutoff2) & (alpha >= alpha_min)
    return start, g, py, px, dx, dy, gauss, raw, alpha, keep


def _transmittance(alpha, keep, t_min):
    a = np.where(keep, alpha, 0.0)
    t_after = np.cumprod(1.0 - a, axis=0)
    t_before = np.vstack([np.ones((1, a.shape[1])), t_after[:-1]])
    stops = keep & (t_after < t_min)
    terminated = np.logical_or.accumulate(stops, axis=0)
    incl = keep & ~terminated
    a = np.where(incl, a, 0.0)
    t_final = np.cumprod(1.0 - a, axis=0)[-1]
    first_stop = np.where(stops.any(axis=0), np.argmax(stops, axis=0), a.shape[0])
    return a, t_before, incl, t_final, first_stop


def forward_tiles(
    tile_ranges, entries, means, conics, opac, colors, bg, width, height, tile, tiles_x,
    cutoff2, alpha_min, alpha_max, t_min, image, alpha_out, var_out, n_contrib, final_t,
):
    for tid in range(len(tile_ranges) - 1):
        start, g, py, px, dx, dy, gauss, raw, alpha, keep = _tile_block(
            tid, tile_ranges, entries, means, conics, opac, width, height, tile, tiles_x, cutoff2, alpha_min, alpha_max
        )
        if len(g) == 0:
            image[py, px] = bg
            alpha_out[py, px] = 0.0
            var_out[py, px] = 0.0
            n_contrib[py, px] = 0
            final_t[py, px] = 1.0
            continue
        a, t_before, incl, t_final, first_stop = _transmittance(alpha, keep, t_min)
        w = a * t_before
        col = np.cumsum(w[:, :, None] * colors[g][:, None, :], axis=0)[-1]
        image[py, px] = col + t_final[:, None] * bg[None, :]
        alpha_out[py, px] = 1.0 - t_final
        var_out[py, px] = np.cumsum(w * w, axis=0)[-1]
        n_contrib[py, px] = first_stop
        final_t[py, px] = t_final


def backward_tiles(
    tile_ranges, entries, means, conics, opac, colors, bg, width, height, tile, tiles_x,
    cutoff2, alpha_min, alpha_max, n_contrib, final_t, grad_image, entry_grads,
):
    for tid in range(len(tile_ranges) - 1):
        start, g, py, px, dx, dy, gauss, raw, alpha, keep = _tile_block(
            tid, tile_ranges, entries, means, conics, opac, width, height, tile, tiles_x, cutoff2, alpha_min, alpha_max
        )
        if len(g) == 0:
            continue
        # included set: entries before each pixel's recorded stop index
        within = np.arange(len(g))[:, None] < n_contrib[py, px][None, :]
        incl = keep & within
        a = np.where(incl, alpha, 0.0)
        t_after = np.cumprod(1.0 - a, axis=0)
        t_before = np.vstack([np.ones((1, a.shape[1])), t_after[:-1]])
        tf = final_t[py, px]
        gpix = grad_image[py, px]  # (P, 3)
        w = a * t_before
        c = colors[g]  # (K, 3)
        wc = w[:, :, None] * c[:, None, :]
        rc = np.cumsum(wc[::-1], axis=0)[::-1]
        after = np.zeros_like(wc)
        after[:-1] = rc[1:]
        after += tf[None, :, None] * bg[None, None, :]
        cg = c @ gpix.T  # (K, P)
        dalpha = t_before * cg - np.einsum("kpc,pc->kp", after, gpix) / (1.0 - a)
        geo = incl & ~(raw > alpha_max)
        dalpha = np.where(geo, dalpha, 0.0)
        dpower = -0.5 * dalpha * a
        k = slice(start, start + len(g))
        entry_grads[k, 0] += np.sum(-dpower * (2.0 * conics[g, 0][:, None] * dx + 2.0 * conics[g, 1][:, None] * dy), axis=1)
        entry_grads[k, 1] += np.sum(-dpower * (2.0 * conics[g, 1][:, None] * dx + 2.0 * conics[g, 2][:, None] * dy), axis=1)
        entry_grads[k, 2] += np.sum(dpower * dx * dx, axis=1)
        entry_grads[k, 3] += np.sum(dpower * 2.0 * dx * dy, axis=1)
        entry_grads[k, 4] += np.sum(dpower * dy * dy, axis=1)
        entry_grads[k, 5] += np.sum(dalpha * gauss, axis=1)
        entry_grads[k, 6:9] += w @ gpix


def reduce_entries(entries, entry_grads, n_gaussians):
    out = np.zeros((n_gaussians, entry_grads.shape[1]))
    np.add.at(out, entries, entry_grads)
    return out
