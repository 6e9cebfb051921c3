import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gsplat_distill.plyio import FORMAT_VERSION, PlyParseError, PlySchemaError, load_cloud, save_cloud
from gsplat_distill.scene import GaussianCloud


def f32_cloud(rng, n):
    arr = lambda *s: rng.standard_normal(s).astype(np.float32).astype(np.float64)  # noqa: E731
    return GaussianCloud(arr(n, 3), arr(n, 3), arr(n, 4), arr(n), arr(n, 3))


def test_roundtrip_bitwise(tmp_path, rng):
    cloud = f32_cloud(rng, 50)
    cloud.step = 17
    save_cloud(cloud, tmp_path / "c.ply")
    back = load_cloud(tmp_path / "c.ply")
    assert back.equals(cloud)
    assert back.step == 17


finite32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float32, st.tuples(st.integers(0, 8), st.just(14)), elements=finite32))
def test_roundtrip_any_finite_float32(tmp_path_factory, data):
    d = data.astype(np.float64)
    cloud = GaussianCloud(d[:, 0:3], d[:, 3:6], d[:, 6:10], d[:, 10], d[:, 11:14])
    path = tmp_path_factory.mktemp("ply") / "c.ply"
    save_cloud(cloud, path)
    back = load_cloud(path)
    for name in GaussianCloud.PARAMS:
        assert getattr(back, name).tobytes() == getattr(cloud, name).tobytes()


def test_empty_cloud(tmp_path):
    save_cloud(GaussianCloud.empty(), tmp_path / "e.ply")
    assert len(load_cloud(tmp_path / "e.ply")) == 0


def test_header_records_version(tmp_path, rng):
    save_cloud(f32_cloud(rng, 2), tmp_path / "c.ply")
    head = (tmp_path / "c.ply").read_bytes()[:200]
    assert f"comment {FORMAT_VERSION}".encode() in head
    assert b"format binary_little_endian 1.0" in head


def test_truncated_file(tmp_path, rng):
    save_cloud(f32_cloud(rng, 10), tmp_path / "c.ply")
    raw = (tmp_path / "c.ply").read_bytes()
    (tmp_path / "t.ply").write_bytes(raw[:-7])
    with pytest.raises(PlyParseError, match="vertex"):
        load_cloud(tmp_path / "t.ply")


def test_bad_magic(tmp_path):
    (tmp_path / "x.ply").write_bytes(b"not a ply\n")
    with pytest.raises(PlyParseError):
        load_cloud(tmp_path / "x.ply")


def test_missing_property(tmp_path):
    header = (
        "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    (tmp_path / "m.ply").write_bytes(header.encode() + np.zeros(3, "<f4").tobytes())
    with pytest.raises(PlySchemaError, match="log_scale_0"):
        load_cloud(tmp_path / "m.ply")


def test_malformed_element_line(tmp_path):
    header = "ply\nformat binary_little_endian 1.0\nelement vertex many\nend_header\n"
    (tmp_path / "b.ply").write_bytes(header.encode())
    with pytest.raises(PlyParseError, match="element"):
        load_cloud(tmp_path / "b.ply")
