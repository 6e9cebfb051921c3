"""Differentiable Gaussian rasterizer."""

from .ops import Projected2D, build_covariance, composite, pixel_alpha, project_covariance, project_gaussian
from .reference import reference_render
from .render import CloudGradients, RenderOutput, contribution_weights, render, render_backward

__all__ = [
    "CloudGradients",
    "Projected2D",
    "RenderOutput",
    "build_covariance",
    "composite",
    "contribution_weights",
    "pixel_alpha",
    "project_covariance",
    "project_gaussian",
    "reference_render",
    "render",
    "render_backward",
]
