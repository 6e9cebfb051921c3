"""Implementations of the ``gsplat-distill`` subcommands."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import gradcheck as gc
from ..guide import IdentityDenoiser, TargetViewDenoiser
from ..noise import init_noise_cloud, iid_noise, structured_noise_batch, variance_map
from ..plyio import load_cloud, save_cloud
from ..raster import render
from ..scene import Camera, GaussianCloud, RenderSettings
from ..synthetic import synthetic_views
from ..trainer import Trainer, TrainState
from . import config as cfgmod
from .config import ConfigError
from .io import read_manifest, write_csv, write_ppm

log = logging.getLogger(__name__)

CONFIG_NAME = "config.resolved.txt"

METRIC_COLUMNS = (
    "step",
    "sigma",
    "rho",
    "score_norm",
    "n_gaussians",
    "azimuth",
    "elevation",
    "fov_y",
    "densified",
    "opacity_reset",
    "heldout_mse",
)


def write_config(out: Path, cfg: dict, name: str = CONFIG_NAME) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(cfgmod.dump(cfg))


def white(settings: RenderSettings) -> RenderSettings:
    return settings.with_background((1.0, 1.0, 1.0))


# -- providers ---------------------------------------------------------------


def build_provider(cfg: dict):
    """(provider, held-out views) for the configured guide; fails before any training."""
    guide = cfgmod.section_config(cfg, "guide")
    res = cfg["trainer.resolution"]
    if guide.provider == "identity":
        if cfg["trainer.camera_source"] == "targets":
            raise ConfigError("trainer.camera_source=targets needs a target-view provider")
        return IdentityDenoiser(), []
    if guide.provider == "synthetic":
        targets, heldout = synthetic_views(res, cfgmod.section_config(cfg, "render"))
        return TargetViewDenoiser(targets, guide.prior_std), heldout
    if not guide.targets:
        raise ConfigError("guide.provider=targets requires guide.targets=<manifest>")
    targets = read_manifest(guide.targets, res)
    heldout = read_manifest(guide.heldout, res) if guide.heldout else []
    return TargetViewDenoiser(targets, guide.prior_std), heldout


# -- generate ----------------------------------------------------------------


def turntable_cameras(out_cfg: cfgmod.OutputConfig) -> list[Camera]:
    n = out_cfg.turntable_poses
    r = out_cfg.turntable_resolution
    return [
        Camera(-180.0 + 360.0 * k / n, out_cfg.turntable_elevation, out_cfg.turntable_radius, out_cfg.turntable_fov, r, r)
        for k in range(n)
    ]


def write_metrics(path: Path, metrics) -> None:
    write_csv(path, "metrics", METRIC_COLUMNS, metrics)


def train(cfg: dict, out: Path, provider=None, heldout=None) -> TrainState:
    """Run the trainer writing checkpoints, final cloud, metrics and a digest trace."""
    if provider is None:
        provider, heldout = build_provider(cfg)
    tc = cfgmod.build_train_config(cfg)
    out_cfg = cfgmod.section_config(cfg, "output")
    trainer = Trainer.create(tc, provider, heldout or [])
    state = trainer.initial_state()
    save_cloud(state.cloud, out / "initial.ply")
    trace = []

    def on_step(s: TrainState) -> None:
        trace.append({"step": s.step, "n_gaussians": len(s.cloud), "digest": s.digest()})
        if out_cfg.checkpoint_interval and s.step % out_cfg.checkpoint_interval == 0:
            save_cloud(s.cloud, out / "checkpoints" / f"step_{s.step:06d}.ply")
            write_metrics(out / "checkpoints" / f"step_{s.step:06d}_metrics.csv", s.metrics)

    trainer.run(state, on_step)
    save_cloud(state.cloud, out / "final.ply")
    write_metrics(out / "metrics.csv", state.metrics)
    write_csv(out / "trace.csv", "trace", ("step", "n_gaussians", "digest"), trace)
    return state


def cmd_generate(cfg: dict, out: Path) -> int:
    provider, heldout = build_provider(cfg)
    write_config(out, cfg)
    state = train(cfg, out, provider, heldout)
    settings = white(cfgmod.section_config(cfg, "render"))
    for i, cam in enumerate(turntable_cameras(cfgmod.section_config(cfg, "output"))):
        write_ppm(out / "turntable" / f"view_{i:03d}.ppm", render(state.cloud, cam, settings).image)
    log.info("wrote %d Gaussians to %s", len(state.cloud), out / "final.ply")
    return 0


# -- render ------------------------------------------------------------------


def cmd_render(cfg: dict, cloud_path: Path, out: Path) -> int:
    cloud = load_cloud(cloud_path)
    v = cfgmod.section_config(cfg, "view")
    camera = Camera(v.azimuth, v.elevation, v.radius, v.fov_y, v.width, v.height)
    image = render(cloud, camera, cfgmod.section_config(cfg, "render")).image
    if out.suffix.lower() == ".ppm":
        target = out
        write_config(out.parent, cfg, out.stem + ".config.txt")
    else:
        target = out / "render.ppm"
        write_config(out, cfg)
    write_ppm(target, image)
    return 0


# -- noise-stats -------------------------------------------------------------


@dataclass
class NoiseStats:
    variance: np.ndarray  # closed-form Var(C), (H, W)
    covered: np.ndarray  # (H, W)
    mean: np.ndarray  # standardized structured noise, channels pooled
    var: np.ndarray
    mixed_mean: np.ndarray
    mixed_var: np.ndarray
    correlation: np.ndarray  # per pixel, channels pooled, view A vs view B mixed noise
    samples: int
    rho: float


def noise_statistics(cfg: dict) -> NoiseStats:
    ns = cfgmod.section_config(cfg, "noise_stats")
    nc = cfgmod.section_config(cfg, "noise")
    settings = cfgmod.section_config(cfg, "render")
    field = init_noise_cloud(nc.count, nc.seed, nc.opacity, nc.scale_factor)
    r = ns.resolution
    cam_a = Camera(ns.azimuth, ns.elevation, 1.0, ns.fov_y, r, r)
    cam_b = Camera(ns.azimuth + ns.pair_delta, ns.elevation, 1.0, ns.fov_y, r, r)
    n = ns.samples
    rng = np.random.default_rng([ns.seed, 11])
    color_seeds = rng.integers(0, 2**63 - 1, n)
    iid_a = rng.integers(0, 2**63 - 1, n)
    iid_b = rng.integers(0, 2**63 - 1, n)
    sa = structured_noise_batch(field, cam_a, settings, color_seeds)
    sb = structured_noise_batch(field, cam_b, settings, color_seeds) if ns.pair_delta != 0 else None
    shape = (r, r, 3)
    acc = {k: np.zeros(shape) for k in ("s", "ss", "m", "mm", "b", "bb", "mb")}
    wa, wb = math.sqrt(ns.rho), math.sqrt(1.0 - ns.rho)
    for k in range(n):
        a = next(sa)
        b = a if sb is None else next(sb)
        ma = wa * a + wb * iid_noise(int(iid_a[k]), shape) if ns.rho < 1.0 else a
        mb = wa * b + wb * iid_noise(int(iid_b[k]), shape) if ns.rho < 1.0 else b
        acc["s"] += a
        acc["ss"] += a * a
        acc["m"] += ma
        acc["mm"] += ma * ma
        acc["b"] += mb
        acc["bb"] += mb * mb
        acc["mb"] += ma * mb
    total = 3 * n

    def pooled(s, ss):
        mean = s.sum(axis=2) / total
        return mean, (ss.sum(axis=2) - total * mean * mean) / (total - 1)

    mean, var = pooled(acc["s"], acc["ss"])
    mixed_mean, mixed_var = pooled(acc["m"], acc["mm"])
    # correlation pooled over channels (each channel centred on its own mean)
    ca = acc["mm"] - acc["m"] ** 2 / n
    cb = acc["bb"] - acc["b"] ** 2 / n
    cab = acc["mb"] - acc["m"] * acc["b"] / n
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = cab.sum(axis=2) / np.sqrt(ca.sum(axis=2) * cb.sum(axis=2))
    v = variance_map(field, cam_a, settings)
    return NoiseStats(v, v >= 1e-4, mean, var, mixed_mean, mixed_var, corr, n, ns.rho)


def noise_summary(st: NoiseStats) -> dict[str, float]:
    cov = st.covered
    strong = st.variance > 0.05
    rel = np.abs(st.var - 1.0)
    return {
        "samples": st.samples,
        "rho": st.rho,
        "covered_fraction": float(cov.mean()),
        "frac_var_in_band": float(np.mean((st.var[cov] >= 0.95) & (st.var[cov] <= 1.05))),
        "frac_mean_in_band": float(np.mean(np.abs(st.mean[cov]) <= 0.05)),
        "strong_pixels": int(strong.sum()),
        "max_rel_var_error_strong": float(rel[strong].max(initial=0.0)),
        "frac_strong_within_2pct": float(np.mean(rel[strong] <= 0.02)) if strong.any() else float("nan"),
        "frac_mixed_var_in_band": float(np.mean((st.mixed_var >= 0.95) & (st.mixed_var <= 1.05))),
        "mean_correlation": float(np.mean(st.correlation)),
        "iid_correlation_bound": 3.0 / math.sqrt(st.samples),
    }


def cmd_noise_stats(cfg: dict, out: Path) -> int:
    write_config(out, cfg)
    st = noise_statistics(cfg)
    h, w = st.variance.shape
    rows = [
        {
            "row": i,
            "col": j,
            "covered": bool(st.covered[i, j]),
            "var_closed": st.variance[i, j],
            "mean": st.mean[i, j],
            "variance": st.var[i, j],
            "mixed_mean": st.mixed_mean[i, j],
            "mixed_variance": st.mixed_var[i, j],
            "correlation": st.correlation[i, j],
        }
        for i in range(h)
        for j in range(w)
    ]
    write_csv(out / "noise_stats.csv", "noise-stats", tuple(rows[0]), rows)
    summary = noise_summary(st)
    write_csv(out / "noise_summary.csv", "noise-summary", ("key", "value"), [{"key": k, "value": v} for k, v in summary.items()])
    for k, v in summary.items():
        print(f"{k}: {v}")
    return 0


# -- gradcheck ---------------------------------------------------------------


def cmd_gradcheck(cfg: dict, out: Path) -> int:
    g = cfgmod.section_config(cfg, "gradcheck")
    write_config(out, cfg)
    raster = gc.rasterizer_suite(g.scenes, g.seed, g.resolution, g.max_gaussians, g.h)
    vgs = gc.vgs_suite(g.vgs_scenes, g.seed + 1, g.resolution, g.max_gaussians, g.sigma, cfg["vgs.gamma"], g.h)
    zero = gc.zero_cotangent_max(g.seed + 2, g.resolution)
    rows = []
    for suite, res in (("raster", raster), ("vgs", vgs)):
        for name, err in res.errors.items():
            ok = err < g.tolerance
            rows.append({"suite": suite, "parameter": name, "max_rel_error": err, "passed": ok})
            print(f"{suite:6s} {name:15s} max rel error {err:.3e}  {'PASS' if ok else 'FAIL'}")
    rows.append({"suite": "zero", "parameter": "all", "max_rel_error": zero, "passed": zero == 0.0})
    print(f"zero-cotangent max |grad| {zero!r}  {'PASS' if zero == 0.0 else 'FAIL'}")
    write_csv(out / "gradcheck.csv", "gradcheck", ("suite", "parameter", "max_rel_error", "passed"), rows)
    return 0 if all(r["passed"] for r in rows) else 1


# -- eval-consistency --------------------------------------------------------


@dataclass
class ConsistencyReport:
    azimuths: np.ndarray  # (P,)
    errors: np.ndarray  # (P,) MSE between view k and view k+1 (wrapping)
    elevation: float
    radius: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def variance(self) -> float:
        return float(np.var(self.errors))

    def max_over_median(self) -> float:
        med = float(np.median(self.errors))
        return float(np.max(self.errors)) / med if med > 0 else (0.0 if np.max(self.errors) == 0 else math.inf)


def consistency_report(cloud: GaussianCloud, cc: cfgmod.ConsistencyConfig, settings: RenderSettings) -> ConsistencyReport:
    """Adjacent-view photometric error over evenly spaced azimuths at a fixed elevation."""
    n = cc.poses
    az = -180.0 + 360.0 * np.arange(n) / n
    r = cc.resolution
    images = [render(cloud, Camera(float(a), cc.elevation, cc.radius, cc.fov_y, r, r), settings).image for a in az]
    errors = np.array([np.mean((images[k] - images[(k + 1) % n]) ** 2) for k in range(n)])
    return ConsistencyReport(az, errors, cc.elevation, cc.radius)


def write_consistency(out: Path, rep: ConsistencyReport) -> None:
    n = len(rep.azimuths)
    rows = [
        {"pair": k, "azimuth_a": rep.azimuths[k], "azimuth_b": rep.azimuths[(k + 1) % n], "mse": rep.errors[k]}
        for k in range(n)
    ]
    write_csv(out / "consistency_pairs.csv", "consistency-pairs", ("pair", "azimuth_a", "azimuth_b", "mse"), rows)
    summary = [
        {"key": "poses", "value": n},
        {"key": "pairing", "value": "adjacent-azimuth-wrapping"},
        {"key": "elevation", "value": rep.elevation},
        {"key": "radius", "value": rep.radius},
        {"key": "mean", "value": rep.mean},
        {"key": "variance", "value": rep.variance},
        {"key": "max_over_median", "value": rep.max_over_median()},
    ]
    write_csv(out / "consistency.csv", "consistency", ("key", "value"), summary)


def cmd_eval_consistency(cfg: dict, cloud_path: Path, out: Path) -> int:
    cloud = load_cloud(cloud_path)
    write_config(out, cfg)
    rep = consistency_report(cloud, cfgmod.section_config(cfg, "consistency"), white(cfgmod.section_config(cfg, "render")))
    write_consistency(out, rep)
    print(f"poses {len(rep.errors)}  mean {rep.mean:.6e}  variance {rep.variance:.6e}")
    return 0


# -- ablate ------------------------------------------------------------------

CELLS = (
    ("full", True, True),
    ("no_structured_noise", False, True),
    ("no_vgs", True, False),
    ("both_off", False, False),
)

ABLATION_COLUMNS = (
    "cell",
    "structured_noise",
    "vgs",
    "final_heldout_mse",
    "consistency_mean",
    "consistency_variance",
    "steps",
    "n_gaussians",
    "final_digest",
)


def cmd_ablate(cfg: dict, out: Path) -> int:
    if cfg["guide.provider"] == "identity":
        raise ConfigError("ablate needs reconstruction targets (guide.provider=synthetic or targets)")
    provider, heldout = build_provider(cfg)
    write_config(out, cfg)
    settings = white(cfgmod.section_config(cfg, "render"))
    cc = cfgmod.section_config(cfg, "consistency")
    rows = []
    for name, noise_on, vgs_on in CELLS:
        cell_cfg = dict(cfg)
        cell_cfg["noise.enabled"] = noise_on
        cell_cfg["vgs.enabled"] = vgs_on
        cell_out = out / name
        write_config(cell_out, cell_cfg)
        state = train(cell_cfg, cell_out, provider, heldout)
        rep = consistency_report(state.cloud, cc, settings)
        write_consistency(cell_out, rep)
        err = Trainer(cfgmod.build_train_config(cell_cfg), provider, None, heldout).heldout_error(state.cloud)
        rows.append(
            {
                "cell": name,
                "structured_noise": noise_on,
                "vgs": vgs_on,
                "final_heldout_mse": err,
                "consistency_mean": rep.mean,
                "consistency_variance": rep.variance,
                "steps": state.step,
                "n_gaussians": len(state.cloud),
                "final_digest": state.digest(),
            }
        )
        print(f"{name:20s} heldout {err:.6e}  consistency var {rep.variance:.6e}  steps {state.step}")
    write_csv(out / "ablation.csv", "ablation", ABLATION_COLUMNS, rows)
    return 0

