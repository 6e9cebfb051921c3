import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsplat_distill.scene import (
    GREY,
    Camera,
    CameraSamplerConfig,
    GaussianCloud,
    RenderSettings,
    init_sphere_cloud,
    quat_to_rotmat,
    sample_camera,
    sigmoid,
)


def test_init_sphere_cloud_4096():
    cloud = init_sphere_cloud(4096, 0.5, 0.1, GREY, seed=7)
    assert len(cloud) == 4096
    assert np.all(np.linalg.norm(cloud.positions, axis=1) <= 0.5)
    np.testing.assert_allclose(cloud.opacities, 0.1, rtol=1e-12)
    assert np.all(cloud.colors == 0.5)
    assert np.all(cloud.rotations == [1.0, 0.0, 0.0, 0.0])
    assert np.all(cloud.scales > 0)
    # isotropic nearest-neighbour scale
    assert np.all(cloud.log_scales == cloud.log_scales[:, :1])


def test_init_sphere_cloud_single():
    cloud = init_sphere_cloud(1, 0.5, 0.1, GREY, seed=3)
    assert len(cloud) == 1
    assert np.linalg.norm(cloud.positions[0]) <= 0.5
    assert cloud[0].opacity == pytest.approx(0.1)


def test_init_sphere_cloud_deterministic():
    a = init_sphere_cloud(500, 0.5, 0.1, GREY, seed=11)
    b = init_sphere_cloud(500, 0.5, 0.1, GREY, seed=11)
    assert a.equals(b)


def test_init_sphere_cloud_mean_near_origin():
    cloud = init_sphere_cloud(100_000, 0.5, 0.1, GREY, seed=5)
    assert np.linalg.norm(cloud.positions.mean(axis=0)) < 0.02


@pytest.mark.parametrize("count,radius", [(0, 0.5), (-1, 0.5), (10, 0.0), (10, -1.0)])
def test_init_sphere_cloud_rejects_bad_arguments(count, radius):
    with pytest.raises(ValueError):
        init_sphere_cloud(count, radius, 0.1, GREY, seed=0)


def test_activations_respect_invariants(rng):
    cloud = GaussianCloud.from_activated(
        rng.normal(size=(5, 3)), rng.uniform(0.01, 1, (5, 3)), np.tile([1.0, 0, 0, 0], (5, 1)), rng.uniform(0.01, 0.99, 5), rng.uniform(size=(5, 3))
    )
    assert np.all(cloud.scales > 0)
    assert np.all((cloud.opacities > 0) & (cloud.opacities < 1))
    assert np.allclose(sigmoid(cloud.opacity_logits), cloud.opacities)


def test_sample_camera_ranges():
    rng = np.random.default_rng(0)
    for _ in range(500):
        cam = sample_camera(rng)
        assert cam.radius == 1.0
        assert 40.0 <= cam.fov_y <= 70.0
        assert -45.0 <= cam.elevation <= 45.0
        assert -180.0 <= cam.azimuth <= 180.0


def test_sample_camera_deterministic():
    a = [sample_camera(np.random.default_rng(9)) for _ in range(2)]
    assert a[0] == a[1]


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        CameraSamplerConfig(fov_range=(70.0, 40.0))


angles = st.floats(-180, 180, allow_nan=False)
elevations = st.floats(-89, 89, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(angles, elevations, st.floats(0.5, 5.0), st.floats(20, 90))
def test_view_matrix_invariants(az, el, radius, fov):
    cam = Camera(az, el, radius, fov, 32, 24)
    w = cam.view_matrix
    r = w[:3, :3]
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(w @ np.append(cam.center, 1.0), [0, 0, 0, 1], atol=1e-9)
    look = -cam.center / np.linalg.norm(cam.center)
    np.testing.assert_allclose(r @ look, [0, 0, 1], atol=1e-9)
    np.testing.assert_allclose(cam.to_view(np.zeros(3)), [0, 0, radius], atol=1e-9)


def test_origin_projects_to_principal_point():
    cam = Camera(40, 10, 1.0, 50, 64, 48)
    np.testing.assert_allclose(cam.project(np.zeros((1, 3)))[0], cam.principal_point, atol=1e-12)


def test_jacobian_matches_finite_difference():
    cam = Camera(0, 0, 1.0, 50, 64, 64)
    t = np.array([0.1, -0.05, 0.9])
    f = cam.focal

    def proj(v):
        return np.array([f * v[0] / v[2], f * v[1] / v[2]])

    num = np.column_stack([(proj(t + h) - proj(t - h)) / 2e-6 for h in np.eye(3) * 1e-6])
    np.testing.assert_allclose(cam.jacobian(t), num, rtol=1e-7, atol=1e-6)


def test_quat_to_rotmat_orthonormal(rng):
    q = rng.standard_normal((20, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    r = quat_to_rotmat(q)
    np.testing.assert_allclose(r @ np.swapaxes(r, 1, 2), np.broadcast_to(np.eye(3), r.shape), atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(r), 1.0, atol=1e-12)


def test_render_settings_validation():
    with pytest.raises(ValueError):
        RenderSettings(alpha_min=0.0)
    with pytest.raises(ValueError):
        RenderSettings(extent_sigma=0.0)
    with pytest.raises(ValueError):
        RenderSettings(tile_size=0)
