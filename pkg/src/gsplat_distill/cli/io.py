"""Image, CSV and manifest I/O for the command-line tools."""

from __future__ import annotations

import math
import os
from pathlib import Path

import numpy as np

from ..scene import Camera

GAMMA = 2.2
CSV_VERSION = "1"


class ManifestError(ValueError):
    pass


class PpmError(ValueError):
    pass


def encode_srgb8(image: np.ndarray) -> np.ndarray:
    """Linear [0,1] floats to 8-bit with the 2.2 power law, rounding half away from zero."""
    v = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) ** (1.0 / GAMMA) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)  # v >= 0, so this is round-half-away


def decode_srgb8(data: np.ndarray) -> np.ndarray:
    return (np.asarray(data, dtype=np.float64) / 255.0) ** GAMMA


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_ppm(path, image: np.ndarray) -> None:
    pixels = encode_srgb8(image)
    h, w, _ = pixels.shape
    _atomic_write(Path(path), f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file (maxval 255) as 8-bit ``(H, W, 3)``."""
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PpmError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise PpmError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PpmError(f"{path}: malformed header") from None
    if maxval != 255:
        raise PpmError(f"{path}: only maxval 255 is supported, got {maxval}")
    body = raw[pos:]
    if len(body) != w * h * 3:
        raise PpmError(f"{path}: expected {w * h * 3} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def format_number(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path, kind: str, columns, rows) -> None:
    """CSV with a schema line ``# gsplat-distill <kind> v<N>`` and fixed column order."""
    lines = [f"# gsplat-distill {kind} v{CSV_VERSION}", ",".join(columns)]
    for row in rows:
        lines.append(",".join(format_number(row[c]) for c in columns))
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode("ascii"))


def read_csv(path) -> tuple[str, list[str], list[dict[str, str]]]:
    text = Path(path).read_text().splitlines()
    schema = text[0].lstrip("# ").strip()
    columns = text[1].split(",")
    return schema, columns, [dict(zip(columns, line.split(","))) for line in text[2:] if line]


def read_manifest(path, resolution: int | None = None) -> list[tuple[Camera, np.ndarray]]:
    """Lines of ``image azimuth elevation radius fov_y``; image paths relative to the manifest."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from None
    views = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ManifestError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            az, el, radius, fov = (float(p) for p in parts[1:])
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: non-numeric pose field") from None
        img_path = path.parent / parts[0]
        try:
            img = decode_srgb8(read_ppm(img_path))
        except (OSError, PpmError) as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
        h, w, _ = img.shape
        if resolution is not None and (h, w) != (resolution, resolution):
            raise ManifestError(f"{path}:{lineno}: image is {w}x{h}, expected {resolution}x{resolution}")
        views.append((Camera(az, el, radius, fov, w, h), img))
    if not views:
        raise ManifestError(f"{path}: no views listed")
    return views


def write_manifest(directory, views, name: str = "manifest.txt") -> Path:
    """Write ``views`` as PPM files plus a manifest; returns the manifest path."""
    directory = Path(directory)
    lines = ["# image azimuth elevation radius fov_y"]
    for i, (cam, img) in enumerate(views):
        fname = f"view_{i:03d}.ppm"
        write_ppm(directory / fname, img)
        lines.append(f"{fname} {cam.azimuth!r} {cam.elevation!r} {cam.radius!r} {cam.fov_y!r}")
    out = directory / name
    _atomic_write(out, ("\n".join(lines) + "\n").encode("ascii"))
    return out
