"""Binary little-endian PLY persistence for Gaussian clouds."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

FORMAT_VERSION = "gsplat-distill-v1"

PROPERTIES = (
    ["x", "y", "z"]
    + [f"log_scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
    + ["opacity_logit", "r", "g", "b"]
)

_PLY_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "uchar": "u1",
    "uint8": "u1",
    "char": "i1",
    "int8": "i1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}


class PlyParseError(ValueError):
    """The file is not a well-formed binary PLY."""


class PlySchemaError(ValueError):
    """The PLY is well-formed but lacks properties a cloud needs."""


def save_cloud(cloud, path) -> None:
    n = len(cloud)
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"comment {FORMAT_VERSION}",
            f"comment step {int(cloud.step)}",
            f"element vertex {n}",
            *[f"property float {p}" for p in PROPERTIES],
            "end_header",
        ]
    ) + "\n"
    data = np.empty(n, dtype=[(p, "<f4") for p in PROPERTIES])
    cols = np.concatenate(
        [
            cloud.positions,
            cloud.log_scales,
            cloud.rotations,
            cloud.opacity_logits[:, None],
            cloud.colors,
        ],
        axis=1,
    ).astype("<f4")
    for i, p in enumerate(PROPERTIES):
        data[p] = cols[:, i]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())
    os.replace(tmp, path)


def _parse_header(raw: bytes, path) -> tuple[int, list[tuple[str, int, list[tuple[str, str]]]], int]:
    marker = b"end_header\n"
    end = raw.find(marker)
    if not raw.startswith(b"ply\n") or end < 0:
        raise PlyParseError(f"{path}: missing 'ply' magic or 'end_header' line")
    lines = raw[:end].decode("ascii", errors="replace").split("\n")[1:]
    fmt = None
    step = 0
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for lineno, line in enumerate(lines, start=2):
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        if key == "format":
            fmt = parts[1:]
        elif key == "comment":
            if len(parts) == 3 and parts[1] == "step":
                try:
                    step = int(parts[2])
                except ValueError as exc:
                    raise PlyParseError(f"{path}:{lineno}: bad step comment {line!r}") from exc
        elif key == "element":
            if len(parts) != 3:
                raise PlyParseError(f"{path}:{lineno}: malformed element line {line!r}")
            try:
                count = int(parts[2])
            except ValueError as exc:
                raise PlyParseError(f"{path}:{lineno}: element '{parts[1]}' has bad count {parts[2]!r}") from exc
            elements.append((parts[1], count, []))
        elif key == "property":
            if not elements:
                raise PlyParseError(f"{path}:{lineno}: property before any element")
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise PlyParseError(
                    f"{path}:{lineno}: element '{elements[-1][0]}' has unsupported property {line!r}"
                )
            elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        elif key == "obj_info":
            continue
        else:
            raise PlyParseError(f"{path}:{lineno}: unknown header keyword {key!r}")
    if fmt != ["binary_little_endian", "1.0"]:
        raise PlyParseError(f"{path}: only 'binary_little_endian 1.0' is supported, got {fmt}")
    return step, elements, end + len(marker)


def load_cloud(path):
    from .scene import GaussianCloud

    path = Path(path)
    raw = path.read_bytes()
    step, elements, offset = _parse_header(raw, path)
    vertex = None
    for name, count, props in elements:
        dtype = np.dtype(props)
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise PlyParseError(
                f"{path}: element '{name}' truncated: expected {nbytes} bytes, found {len(raw) - offset}"
            )
        if name == "vertex":
            vertex = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        offset += nbytes
    if offset != len(raw):
        raise PlyParseError(f"{path}: {len(raw) - offset} trailing bytes after last element")
    if vertex is None:
        raise PlySchemaError(f"{path}: no 'vertex' element")
    missing = [p for p in PROPERTIES if p not in vertex.dtype.names]
    if missing:
        raise PlySchemaError(f"{path}: element 'vertex' missing required properties {missing}")
    col = {p: vertex[p].astype(np.float64) for p in PROPERTIES}
    stack = lambda names: np.stack([col[n] for n in names], axis=1).reshape(len(vertex), len(names))  # noqa: E731
    return GaussianCloud(
        stack(["x", "y", "z"]),
        stack([f"log_scale_{i}" for i in range(3)]),
        stack([f"rot_{i}" for i in range(4)]),
        col["opacity_logit"],
        stack(["r", "g", "b"]),
        step=step,
    )
