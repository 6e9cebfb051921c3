"""Variational splats: jitter positions and log-scales at the guidance noise level.

The render and its gradient are evaluated at the jittered parameters; since
the jitter is additive, d(theta')/d(theta) is the identity and the gradient is
applied unchanged to the unperturbed means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import CloudGradients
from .scene import GaussianCloud


@dataclass(frozen=True)
class VGSConfig:
    enabled: bool = True
    gamma: float = 0.15

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class PerturbationRecord:
    position_offsets: np.ndarray  # (N, 3)
    scale_offsets: np.ndarray  # (N, 3), log-scale space
    sigma: float
    gamma: float
    seed: int


def draw_offsets(n: int, sigma: float, gamma: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n, 6))
    mag = sigma * gamma
    return mag * eps[:, :3], mag * eps[:, 3:]


def perturb(
    cloud: GaussianCloud, sigma: float, config: VGSConfig = VGSConfig(), seed: int = 0
) -> tuple[GaussianCloud, PerturbationRecord]:
    """Return a jittered copy of ``cloud``; the input is never modified."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    n = len(cloud)
    gamma = config.gamma if config.enabled else 0.0
    out = cloud.copy()
    if sigma * gamma == 0.0:
        zeros = np.zeros((n, 3))
        return out, PerturbationRecord(zeros, zeros.copy(), float(sigma), float(gamma), seed)
    dpos, dscale = draw_offsets(n, sigma, gamma, seed)
    out.positions = cloud.positions + dpos
    out.log_scales = cloud.log_scales + dscale
    return out, PerturbationRecord(dpos, dscale, float(sigma), float(gamma), seed)


def apply_record(cloud: GaussianCloud, record: PerturbationRecord) -> GaussianCloud:
    """Re-apply a stored perturbation (replay of a single step)."""
    out = cloud.copy()
    out.positions = cloud.positions + record.position_offsets
    out.log_scales = cloud.log_scales + record.scale_offsets
    return out


def passthrough_gradients(grads: CloudGradients, cloud: GaussianCloud | None = None) -> CloudGradients:
    """Gradients at the perturbed parameters, to be applied to the means as-is."""
    if cloud is not None:
        grads.check_shapes(cloud)
    return grads
