import numpy as np
import pytest

from gsplat_distill.gradcheck import vgs_suite
from gsplat_distill.guide import SigmaSchedule, TargetViewDenoiser, sigma_at
from gsplat_distill.raster import CloudGradients
from gsplat_distill.scene import Camera
from gsplat_distill.trainer import DensifyConfig, NoiseConfig, TrainConfig, Trainer
from gsplat_distill.vgs import VGSConfig, apply_record, draw_offsets, passthrough_gradients, perturb


def test_zero_magnitude_is_exact(small_cloud):
    for sigma, cfg in ((0.0, VGSConfig()), (0.7, VGSConfig(gamma=0.0)), (0.7, VGSConfig(enabled=False))):
        out, rec = perturb(small_cloud, sigma, cfg, seed=3)
        assert out.equals(small_cloud)
        assert np.all(rec.position_offsets == 0) and np.all(rec.scale_offsets == 0)


def test_offset_std_monte_carlo():
    dpos, dscale = draw_offsets(100_000, 1.0, 0.15, seed=0)
    assert dpos.std() == pytest.approx(0.15, rel=0.02)
    assert dscale.std() == pytest.approx(0.15, rel=0.02)


def test_same_seed_same_view(small_cloud):
    a, _ = perturb(small_cloud, 0.5, seed=9)
    b, _ = perturb(small_cloud, 0.5, seed=9)
    assert a.equals(b)


def test_only_position_and_scale_change(small_cloud):
    before = small_cloud.copy()
    out, rec = perturb(small_cloud, 0.8, seed=1)
    assert small_cloud.equals(before)
    for name in ("rotations", "opacity_logits", "colors"):
        assert getattr(out, name).tobytes() == getattr(small_cloud, name).tobytes()
    np.testing.assert_array_equal(out.positions, small_cloud.positions + rec.position_offsets)
    np.testing.assert_array_equal(out.log_scales, small_cloud.log_scales + rec.scale_offsets)
    assert np.all(out.scales > 0)
    assert apply_record(small_cloud, rec).equals(out)


def test_offsets_annealed_with_sigma():
    sched = SigmaSchedule(1.0, 0.02, 2000)
    first, _ = draw_offsets(50, sigma_at(sched, 0), 0.15, seed=4)
    last, _ = draw_offsets(50, sigma_at(sched, 2000), 0.15, seed=4)
    np.testing.assert_allclose(last / first, 0.02, rtol=1e-12)


def test_negative_inputs_rejected(small_cloud):
    with pytest.raises(ValueError):
        perturb(small_cloud, -1.0)
    with pytest.raises(ValueError):
        VGSConfig(gamma=-0.1)


def test_passthrough_identity(small_cloud, rng):
    g = CloudGradients(*(rng.normal(size=getattr(small_cloud, f).shape) for f in CloudGradients.FIELDS))
    assert passthrough_gradients(g, small_cloud) is g


def test_passthrough_shape_mismatch(small_cloud):
    g = CloudGradients.zeros_like(small_cloud.select(np.arange(2)))
    with pytest.raises(ValueError):
        passthrough_gradients(g, small_cloud)


def test_frozen_noise_finite_differences():
    res = vgs_suite(scenes=3, seed=7)
    assert res.passed(1e-4), res.errors


def _trainer(vgs, provider=None, steps=6):
    cam = Camera(0, 10, 1, 50, 16, 16)
    provider = provider or TargetViewDenoiser([(cam, np.full((16, 16, 3), 0.3))])
    cfg = TrainConfig(
        total_steps=steps,
        resolution=16,
        init_count=64,
        noise=NoiseConfig(count=512),
        densify=DensifyConfig(enabled=False),
        vgs=vgs,
    )
    return Trainer.create(cfg, provider)


def test_disabled_equals_vanilla_bitwise():
    off = _trainer(VGSConfig(enabled=False)).run()
    zero = _trainer(VGSConfig(enabled=True, gamma=0.0)).run()
    on = _trainer(VGSConfig(enabled=True, gamma=0.15)).run()
    assert off.digest() == zero.digest()
    assert on.digest() != off.digest()
