"""Score-distillation training loop with densification and opacity resets."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .guide import ScoreProvider, SigmaSchedule, TargetViewDenoiser, distill_step, sigma_at
from .noise import RHO_END, RHO_START, NoiseField, init_noise_cloud, mix_schedule
from .raster import CloudGradients, render
from .scene import (
    GREY,
    Camera,
    CameraSamplerConfig,
    GaussianCloud,
    RenderSettings,
    init_sphere_cloud,
    logit,
    quat_to_rotmat,
    sample_camera,
)
from .vgs import VGSConfig, passthrough_gradients, perturb

log = logging.getLogger(__name__)

PARAMS = GaussianCloud.PARAMS


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class OptimConfig:
    lr_position: float = 1.6e-4
    lr_position_final_ratio: float = 0.01
    lr_log_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 1.25e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15


@dataclass(frozen=True)
class DensifyConfig:
    enabled: bool = True
    start: int = 300
    interval: int = 50
    until: int = 0  # 0 means "until the end of training"
    grad_threshold: float = 2e-4
    prune_opacity: float = 0.005
    split_scale_fraction: float = 0.01
    scene_extent: float = 1.0
    split_factor: float = 1.6
    max_gaussians: int = 8192

    def __post_init__(self):
        if self.interval < 1:
            raise ValueError("densify interval must be positive")


@dataclass(frozen=True)
class NoiseConfig:
    enabled: bool = True
    count: int = 16384
    seed: int = 1
    opacity: float = 0.6
    scale_factor: float = 2.0
    rho_start: float = RHO_START
    rho_end: float = RHO_END
    resample_colors: bool = True


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 2000
    seed: int = 0
    resolution: int = 64
    opacity_reset_interval: int = 400
    opacity_reset_value: float = 0.05
    eval_interval: int = 10
    init_count: int = 4096
    init_radius: float = 0.5
    init_opacity: float = 0.1
    init_color: tuple[float, float, float] = GREY
    camera_source: str = "random"  # or "targets"
    white_background_prob: float = 1.0
    sigma_max: float = 1.0
    sigma_min: float = 0.02
    clamp_colors: bool = True
    camera: CameraSamplerConfig = CameraSamplerConfig()
    render: RenderSettings = RenderSettings()
    optim: OptimConfig = OptimConfig()
    densify: DensifyConfig = DensifyConfig()
    noise: NoiseConfig = NoiseConfig()
    vgs: VGSConfig = VGSConfig()

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.opacity_reset_interval < 1:
            raise ValueError("opacity_reset_interval must be positive")
        if self.densify.start > self.total_steps and self.densify.enabled and self.total_steps > 0:
            log.debug("densify.start beyond total_steps: densification never triggers")
        if self.camera_source not in ("random", "targets"):
            raise ValueError(f"camera_source must be 'random' or 'targets', got {self.camera_source!r}")

    @property
    def sigma_schedule(self) -> SigmaSchedule:
        return SigmaSchedule(self.sigma_max, self.sigma_min, max(self.total_steps, 1))

    @property
    def camera_sampler(self) -> CameraSamplerConfig:
        return replace(self.camera, width=self.resolution, height=self.resolution)


# rng stream tags: each concern draws from its own generator so toggling one
# feature never shifts the random numbers another feature sees
STREAMS = {"camera": 1, "vgs": 2, "guide": 3, "background": 4, "densify": 5}


def make_rngs(seed: int) -> dict[str, np.random.Generator]:
    return {name: np.random.default_rng([seed, tag]) for name, tag in STREAMS.items()}


@dataclass
class TrainState:
    cloud: GaussianCloud
    step: int = 0
    adam_step: int = 0
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    metrics: list[dict] = field(default_factory=list)
    rngs: dict[str, np.random.Generator] = field(default_factory=dict)

    def check_bookkeeping(self) -> None:
        n = len(self.cloud)
        assert len(self.cloud.grad_accum) == n and len(self.cloud.grad_count) == n
        for name, (m, v) in self.moments.items():
            assert m.shape == getattr(self.cloud, name).shape == v.shape, name

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64([self.step, self.adam_step, len(self.cloud)]).tobytes())
        for name in PARAMS:
            h.update(np.ascontiguousarray(getattr(self.cloud, name)).tobytes())
            m, v = self.moments[name]
            h.update(m.tobytes())
            h.update(v.tobytes())
        return h.hexdigest()


def init_state(cloud: GaussianCloud, seed: int) -> TrainState:
    cloud = cloud.copy()
    moments = {name: (np.zeros_like(getattr(cloud, name)), np.zeros_like(getattr(cloud, name))) for name in PARAMS}
    return TrainState(cloud=cloud, moments=moments, rngs=make_rngs(seed))


def adam_update(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-15):
    """One bias-corrected Adam step (``t`` is 1-based); returns new (param, m, v)."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def learning_rates(config: TrainConfig, step: int) -> dict[str, float]:
    o = config.optim
    frac = step / max(config.total_steps, 1)
    return {
        "positions": o.lr_position * o.lr_position_final_ratio**frac,
        "log_scales": o.lr_log_scale,
        "rotations": o.lr_rotation,
        "opacity_logits": o.lr_opacity,
        "colors": o.lr_color,
    }


def optimizer_update(state: TrainState, grads: CloudGradients, config: TrainConfig) -> TrainState:
    """Minimizing Adam step on ``grads`` (already sign-flipped to a loss gradient)."""
    grads.check_shapes(state.cloud)
    if not grads.is_finite():
        raise NonFiniteGradientError(f"non-finite gradient at step {state.step}")
    o = config.optim
    t = state.adam_step + 1
    lrs = learning_rates(config, state.step)
    new_params = {}
    new_moments = {}
    for name in PARAMS:
        m, v = state.moments[name]
        p, m, v = adam_update(getattr(state.cloud, name), getattr(grads, name), m, v, t, lrs[name], o.beta1, o.beta2, o.eps)
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(v)) and np.all(np.isfinite(p))):
            raise NonFiniteGradientError(f"non-finite optimizer state for {name} at step {state.step}")
        new_params[name] = p
        new_moments[name] = (m, v)
    for name, p in new_params.items():
        setattr(state.cloud, name, p)
    state.moments = new_moments
    state.adam_step = t
    state.cloud.normalize_rotations()
    if config.clamp_colors:
        np.clip(state.cloud.colors, 0.0, 1.0, out=state.cloud.colors)
    return state


def reset_opacity(state: TrainState, value: float = 0.05) -> TrainState:
    """Clamp every activated opacity down to ``value``; other fields untouched."""
    cap = float(logit(value))
    state.cloud.opacity_logits = np.minimum(state.cloud.opacity_logits, cap)
    m, v = state.moments["opacity_logits"]
    state.moments["opacity_logits"] = (np.zeros_like(m), np.zeros_like(v))
    return state


def _append(state: TrainState, extra: GaussianCloud) -> None:
    c = state.cloud
    for name in PARAMS:
        setattr(c, name, np.concatenate([getattr(c, name), getattr(extra, name)]))
        m, v = state.moments[name]
        z = np.zeros_like(getattr(extra, name))
        state.moments[name] = (np.concatenate([m, z]), np.concatenate([v, z.copy()]))
    c.grad_accum = np.concatenate([c.grad_accum, np.zeros(len(extra))])
    c.grad_count = np.concatenate([c.grad_count, np.zeros(len(extra), dtype=np.int64)])


def _keep(state: TrainState, mask: np.ndarray) -> None:
    state.cloud = state.cloud.select(mask)
    state.moments = {name: (m[mask], v[mask]) for name, (m, v) in state.moments.items()}


def densify_candidates(cloud: GaussianCloud, config: DensifyConfig) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks (clone, split) from the mean accumulated gradient and scale."""
    mean_grad = np.where(cloud.grad_count > 0, cloud.grad_accum / np.maximum(cloud.grad_count, 1), 0.0)
    hot = mean_grad >= config.grad_threshold
    hot &= cloud.grad_count > 0
    budget = config.max_gaussians - len(cloud)
    if budget <= 0:
        hot[:] = False
    elif hot.sum() > budget:
        # keep the strongest; ties resolved by index for determinism
        order = np.lexsort((np.arange(len(cloud)), -mean_grad))
        chosen = order[:budget]
        hot = np.zeros(len(cloud), dtype=bool)
        hot[chosen] = True
    large = cloud.scales.max(axis=1) > config.split_scale_fraction * config.scene_extent
    return hot & ~large, hot & large


def densify(state: TrainState, config: TrainConfig) -> TrainState:
    """Clone small hot Gaussians, split large hot ones in two, prune transparent ones."""
    d = config.densify
    cloud = state.cloud
    clone, split = densify_candidates(cloud, d)
    rng = state.rngs["densify"]

    clones = cloud.select(clone)
    parents = cloud.select(split)
    n_split = len(parents)
    children = parents.select(np.repeat(np.arange(n_split), 2))
    if n_split:
        rot = quat_to_rotmat(children.rotations / np.linalg.norm(children.rotations, axis=1, keepdims=True))
        eps = rng.standard_normal((2 * n_split, 3)) * children.scales
        children.positions = children.positions + np.einsum("nij,nj->ni", rot, eps)
        children.log_scales = children.log_scales - math.log(d.split_factor)

    keep = ~split
    _keep(state, keep)
    if len(clones):
        _append(state, clones)
    if n_split:
        _append(state, children)

    alive = state.cloud.opacities >= d.prune_opacity
    if not alive.all():
        _keep(state, alive)
    state.cloud.grad_accum = np.zeros(len(state.cloud))
    state.cloud.grad_count = np.zeros(len(state.cloud), dtype=np.int64)
    state.check_bookkeeping()
    return state


@dataclass
class Trainer:
    config: TrainConfig
    provider: ScoreProvider
    field: NoiseField | None = None
    eval_views: Sequence[tuple[Camera, np.ndarray]] = ()

    @classmethod
    def create(cls, config: TrainConfig, provider: ScoreProvider, eval_views=()) -> "Trainer":
        nf = None
        if config.noise.enabled:
            n = config.noise
            nf = init_noise_cloud(n.count, n.seed, n.opacity, n.scale_factor)
        return cls(config, provider, nf, list(eval_views))

    def initial_state(self, cloud: GaussianCloud | None = None) -> TrainState:
        c = self.config
        if cloud is None:
            cloud = init_sphere_cloud(c.init_count, c.init_radius, c.init_opacity, c.init_color, seed=c.seed)
        return init_state(cloud, c.seed)

    def _camera(self, state: TrainState) -> Camera:
        rng = state.rngs["camera"]
        if self.config.camera_source == "targets":
            if not isinstance(self.provider, TargetViewDenoiser):
                raise ValueError("camera_source='targets' needs a TargetViewDenoiser provider")
            return self.provider.cameras[int(rng.integers(len(self.provider)))]
        return sample_camera(rng, self.config.camera_sampler)

    def _settings(self, state: TrainState) -> RenderSettings:
        rng = state.rngs["background"]
        u = rng.random()
        random_bg = rng.random(3)
        if u < self.config.white_background_prob:
            return self.config.render.with_background((1.0, 1.0, 1.0))
        return self.config.render.with_background(random_bg)

    def heldout_error(self, cloud: GaussianCloud) -> float:
        if not self.eval_views:
            return float("nan")
        settings = self.config.render.with_background((1.0, 1.0, 1.0))
        errs = [np.mean((render(cloud, cam, settings).image - img) ** 2) for cam, img in self.eval_views]
        return float(np.mean(errs))

    def train_step(self, state: TrainState) -> TrainState:
        c = self.config
        step = state.step
        camera = self._camera(state)
        settings = self._settings(state)
        sigma = sigma_at(c.sigma_schedule, step)
        rho = mix_schedule(step, c.total_steps, c.noise.rho_start, c.noise.rho_end) if self.field is not None else 0.0
        vgs_seed = int(state.rngs["vgs"].integers(0, 2**63 - 1))
        perturbed, _record = perturb(state.cloud, sigma, c.vgs, vgs_seed)

        score_grads, report = distill_step(
            perturbed, camera, self.field, self.provider, sigma, rho, settings, state.rngs["guide"], c.noise.resample_colors
        )
        grads = passthrough_gradients(score_grads, state.cloud)
        loss_grads = grads.scaled(-1.0)
        optimizer_update(state, loss_grads, c)

        # densification statistic: positional gradient of 0.5 * mean squared pixel residual
        visible = np.zeros(len(state.cloud), dtype=bool)
        visible[report.forward.bins.entries] = True
        norm = sigma * sigma / (3.0 * camera.width * camera.height)
        gnorm = np.linalg.norm(grads.positions, axis=1) * norm
        state.cloud.grad_accum[visible] += gnorm[visible]
        state.cloud.grad_count[visible] += 1

        it = step + 1
        densified = reset = False
        d = c.densify
        until = d.until or c.total_steps
        if d.enabled and it > d.start and it % d.interval == 0 and it < until:
            densify(state, c)
            densified = True
        if it % c.opacity_reset_interval == 0 and it < c.total_steps:
            reset_opacity(state, c.opacity_reset_value)
            reset = True

        state.step = it
        state.cloud.step = it
        state.check_bookkeeping()
        row = {
            "step": it,
            "sigma": sigma,
            "rho": rho,
            "score_norm": report.score_norm,
            "n_gaussians": len(state.cloud),
            "azimuth": camera.azimuth,
            "elevation": camera.elevation,
            "fov_y": camera.fov_y,
            "densified": int(densified),
            "opacity_reset": int(reset),
            "heldout_mse": float("nan"),
        }
        if c.eval_interval and self.eval_views and (it % c.eval_interval == 0 or it == c.total_steps):
            row["heldout_mse"] = self.heldout_error(state.cloud)
        state.metrics.append(row)
        return state

    def run(self, state: TrainState | None = None, callback: Callable[[TrainState], None] | None = None) -> TrainState:
        if state is None:
            state = self.initial_state()
        while state.step < self.config.total_steps:
            self.train_step(state)
            if callback is not None:
                callback(state)
        return state
