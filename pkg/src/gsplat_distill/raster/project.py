"""Batched projection of a cloud into a camera and its analytic adjoint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene import Camera, GaussianCloud, RenderSettings, quat_to_rotmat, sigmoid


@dataclass
class ProjectedCloud:
    means2d: np.ndarray  # (N, 2)
    conics: np.ndarray  # (N, 3): a, b, c of (cov2d + blur)^-1
    cov2d: np.ndarray  # (N, 2, 2) before blur
    depths: np.ndarray  # (N,)
    opacities: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)
    valid: np.ndarray  # (N,) bool, False when behind the near plane
    half_extent: np.ndarray  # (N, 2) bounding half-widths of the cutoff ellipse, pixels
    # intermediates for the adjoint
    view: np.ndarray
    jac: np.ndarray
    cov_view: np.ndarray
    rot: np.ndarray
    scales: np.ndarray
    quat_unit: np.ndarray
    quat_norm: np.ndarray
    blurred: np.ndarray


def project_cloud(cloud: GaussianCloud, camera: Camera, settings: RenderSettings) -> ProjectedCloud:
    n = len(cloud)
    w = camera.rotation
    t = camera.to_view(cloud.positions).reshape(n, 3)
    valid = t[:, 2] >= settings.near
    # culled entries get a harmless depth so the arithmetic below stays finite
    tz = np.where(valid, t[:, 2], 1.0)
    t_safe = np.column_stack([t[:, 0], t[:, 1], tz])

    qnorm = np.linalg.norm(cloud.rotations, axis=1)
    qn = cloud.rotations / qnorm[:, None]
    rot = quat_to_rotmat(qn)
    scales = np.exp(cloud.log_scales)
    m = rot * scales[:, None, :]
    cov3d = m @ np.swapaxes(m, 1, 2)
    cov_view = w @ cov3d @ w.T
    jac = camera.jacobian(t_safe)
    cov2d = jac @ cov_view @ np.swapaxes(jac, 1, 2)

    blurred = cov2d + settings.cov2d_blur * np.eye(2)
    det = blurred[:, 0, 0] * blurred[:, 1, 1] - blurred[:, 0, 1] * blurred[:, 1, 0]
    conics = np.column_stack([blurred[:, 1, 1] / det, -blurred[:, 0, 1] / det, blurred[:, 0, 0] / det])

    f = camera.focal
    cx, cy = camera.principal_point
    means2d = np.column_stack([f * t_safe[:, 0] / tz + cx, f * t_safe[:, 1] / tz + cy])
    half = settings.extent_sigma * np.sqrt(np.column_stack([blurred[:, 0, 0], blurred[:, 1, 1]]))
    return ProjectedCloud(
        means2d=means2d,
        conics=conics,
        cov2d=cov2d,
        depths=t[:, 2].copy(),
        opacities=sigmoid(cloud.opacity_logits),
        colors=cloud.colors,
        valid=valid,
        half_extent=half,
        view=t_safe,
        jac=jac,
        cov_view=cov_view,
        rot=rot,
        scales=scales,
        quat_unit=qn,
        quat_norm=qnorm,
        blurred=blurred,
    )


def _quat_rotmat_vjp(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Cotangent of a unit quaternion given the cotangent ``g`` of its rotation matrix."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g00, g01, g02 = g[:, 0, 0], g[:, 0, 1], g[:, 0, 2]
    g10, g11, g12 = g[:, 1, 0], g[:, 1, 1], g[:, 1, 2]
    g20, g21, g22 = g[:, 2, 0], g[:, 2, 1], g[:, 2, 2]
    dw = 2.0 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    dx = 2.0 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12 + z * g20 + w * g21 - 2 * x * g22)
    dy = 2.0 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21 - 2 * y * g22)
    dz = 2.0 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11 + y * g12 + x * g20 + y * g21)
    return np.column_stack([dw, dx, dy, dz])


def project_cloud_vjp(proj: ProjectedCloud, camera: Camera, per_gaussian: np.ndarray) -> dict[str, np.ndarray]:
    """Chain per-Gaussian screen-space cotangents back to stored parameters.

    ``per_gaussian`` is (N, 9): d/d mean2d (2), d/d conic a, b, c (3),
    d/d activated opacity (1), d/d color (3).
    """
    g = per_gaussian
    valid = proj.valid
    n = len(valid)
    f = camera.focal
    w = camera.rotation

    # conic -> blurred covariance: dL/dM = -A G A with G symmetric
    a, b, c = proj.conics[:, 0], proj.conics[:, 1], proj.conics[:, 2]
    conic = np.empty((n, 2, 2))
    conic[:, 0, 0], conic[:, 0, 1], conic[:, 1, 0], conic[:, 1, 1] = a, b, b, c
    gconic = np.empty((n, 2, 2))
    gconic[:, 0, 0] = g[:, 2]
    gconic[:, 0, 1] = gconic[:, 1, 0] = 0.5 * g[:, 3]
    gconic[:, 1, 1] = g[:, 4]
    gcov2d = -conic @ gconic @ conic

    # cov2d = J V J^T
    jac, v = proj.jac, proj.cov_view
    gjac = 2.0 * gcov2d @ jac @ v
    gv = np.swapaxes(jac, 1, 2) @ gcov2d @ jac
    gcov3d = w.T @ gv @ w

    # cov3d = N N^T, N = R diag(s)
    rot, s = proj.rot, proj.scales
    nmat = rot * s[:, None, :]
    gn = 2.0 * gcov3d @ nmat
    gs = np.einsum("nik,nik->nk", gn, rot)
    grot = gn * s[:, None, :]
    gq_unit = _quat_rotmat_vjp(proj.quat_unit, grot)
    qn = proj.quat_unit
    gq = (gq_unit - qn * np.sum(qn * gq_unit, axis=1, keepdims=True)) / proj.quat_norm[:, None]

    # view-space position through the mean and the Jacobian
    tx, ty, tz = proj.view[:, 0], proj.view[:, 1], proj.view[:, 2]
    gmx, gmy = g[:, 0], g[:, 1]
    inv_z = 1.0 / tz
    inv_z2 = inv_z * inv_z
    inv_z3 = inv_z2 * inv_z
    gt = np.empty((n, 3))
    gt[:, 0] = gmx * f * inv_z - gjac[:, 0, 2] * f * inv_z2
    gt[:, 1] = gmy * f * inv_z - gjac[:, 1, 2] * f * inv_z2
    gt[:, 2] = (
        -gmx * f * tx * inv_z2
        - gmy * f * ty * inv_z2
        - gjac[:, 0, 0] * f * inv_z2
        - gjac[:, 1, 1] * f * inv_z2
        + gjac[:, 0, 2] * 2.0 * f * tx * inv_z3
        + gjac[:, 1, 2] * 2.0 * f * ty * inv_z3
    )
    gpos = gt @ w

    op = proj.opacities
    grads = {
        "positions": gpos,
        "log_scales": gs * s,
        "rotations": gq,
        "opacity_logits": g[:, 5] * op * (1.0 - op),
        "colors": g[:, 6:9].copy(),
    }
    for arr in grads.values():
        arr[~valid] = 0.0
    return grads
