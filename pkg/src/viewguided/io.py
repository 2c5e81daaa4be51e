"""File formats: XYZ/PLY clouds, 16-bit PGM depth maps, camera JSON and
predictor checkpoints."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .core import CloudLike, PointCloud, as_points
from .view import CameraParams

PathLike = Union[str, Path]

# depth PGM: value = round(depth * DEPTH_SCALE); PGM_BACKGROUND marks +inf
DEPTH_SCALE = 10000.0
PGM_BACKGROUND = 65535

CHECKPOINT_MAGIC = b"VGPRED\x00\x01"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    pass


def write_xyz(path: PathLike, cloud: CloudLike) -> None:
    pts = as_points(cloud)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for x, y, z in pts.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


def read_xyz(path: PathLike) -> PointCloud:
    rows = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 3:
                raise FormatError(f"{path}:{lineno}: expected 'x y z'")
            try:
                rows.append([float(v) for v in parts[:3]])
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply(path: PathLike, cloud: CloudLike, binary: bool = True) -> None:
    pts = as_points(cloud)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    f32 = pts.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(f32.tobytes())
        else:
            for x, y, z in f32:
                fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n".encode("ascii"))


def read_ply(path: PathLike) -> PointCloud:
    """Read x/y/z of the vertex element; other scalar properties are skipped."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    body_start = data.index(b"\n", end) + 1
    header = data[:end].decode("ascii").splitlines()
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for line in header[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if tok[1] == "list":
                if elements[-1][0] == "vertex":
                    raise FormatError(f"{path}: list properties in the vertex element are not supported")
                elements[-1][2].append((tok[-1], "list"))
                continue
            if tok[1] not in _PLY_TYPES:
                raise FormatError(f"{path}: unknown property type {tok[1]}")
            elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
    if not elements or elements[0][0] != "vertex":
        raise FormatError(f"{path}: first element must be 'vertex'")
    _, count, props = elements[0]
    names = [p[0] for p in props]
    if not {"x", "y", "z"} <= set(names):
        raise FormatError(f"{path}: vertex element lacks x/y/z")
    if fmt == "binary_little_endian":
        dt = np.dtype([(n, "<" + t) for n, t in props])
        arr = np.frombuffer(data, dtype=dt, count=count, offset=body_start)
        pts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
    elif fmt == "ascii":
        lines = data[body_start:].decode("ascii").split("\n")
        rows = [l.split() for l in lines if l.strip()][:count]
        if len(rows) < count:
            raise FormatError(f"{path}: expected {count} vertices, found {len(rows)}")
        cols = [names.index(c) for c in "xyz"]
        pts = np.array([[float(r[c]) for c in cols] for r in rows], dtype=np.float64).reshape(-1, 3)
    else:
        raise FormatError(f"{path}: unsupported PLY format {fmt!r}")
    return PointCloud(pts)


def read_cloud(path: PathLike) -> PointCloud:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix in (".xyz", ".txt"):
        return read_xyz(path)
    raise FormatError(f"{path}: unknown cloud format (use .ply or .xyz)")


def write_cloud(path: PathLike, cloud: CloudLike) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        write_ply(path, cloud)
    elif suffix in (".xyz", ".txt"):
        write_xyz(path, cloud)
    else:
        raise FormatError(f"{path}: unknown cloud format (use .ply or .xyz)")


def depth_to_pgm_values(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    finite = np.isfinite(depth)
    if np.any(depth[finite] * DEPTH_SCALE >= PGM_BACKGROUND - 0.5) or np.any(depth[finite] <= 0):
        raise FormatError(f"depth outside the encodable range (0, {(PGM_BACKGROUND - 1) / DEPTH_SCALE}]")
    vals = np.full(depth.shape, PGM_BACKGROUND, dtype=np.uint16)
    vals[finite] = np.maximum(np.rint(depth[finite] * DEPTH_SCALE), 1).astype(np.uint16)
    return vals


def quantize_depth(depth: np.ndarray) -> np.ndarray:
    """The depth map exactly as it reads back from PGM."""
    vals = depth_to_pgm_values(depth)
    return np.where(vals == PGM_BACKGROUND, np.inf, vals / DEPTH_SCALE)


def write_depth_pgm(path: PathLike, depth: np.ndarray) -> None:
    vals = depth_to_pgm_values(depth)
    h, w = vals.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n# depth scale {DEPTH_SCALE:g}, background {PGM_BACKGROUND}\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(vals.astype(">u2").tobytes())


def read_depth_pgm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM")
    fields, pos = [], 2
    while len(fields) < 3:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    w, h, maxval = fields
    if maxval != 65535:
        raise FormatError(f"{path}: expected a 16-bit PGM")
    vals = np.frombuffer(data, dtype=">u2", count=w * h, offset=pos).reshape(h, w)
    return np.where(vals == PGM_BACKGROUND, np.inf, vals / DEPTH_SCALE)


def dump_json(path: PathLike, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_json(path: PathLike):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: {e}") from None


def write_camera(path: PathLike, cam: CameraParams) -> None:
    dump_json(path, cam.to_dict())


def read_camera(path: PathLike) -> CameraParams:
    d = load_json(path)
    try:
        return CameraParams.from_dict(d)
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: bad camera record ({e})") from None


def write_checkpoint(path: PathLike, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Layout: magic, u32 version, u32 meta length, meta JSON, u32 tensor count,
    per tensor (u16 name length, name, u8 ndim, u32 dims...), then all tensors
    as little-endian float64 in table order."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<II", CHECKPOINT_VERSION, len(meta_bytes))
    out += meta_bytes
    names = list(tensors)
    out += struct.pack("<I", len(names))
    for name in names:
        a = np.asarray(tensors[name])
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim)
        out += struct.pack(f"<{a.ndim}I", *a.shape)
    for name in names:
        out += np.ascontiguousarray(tensors[name], dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def read_checkpoint(path: PathLike) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{path}: not a predictor checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    version, mlen = struct.unpack_from("<II", data, pos)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    meta = json.loads(data[pos : pos + mlen].decode("utf-8"))
    pos += mlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    table = []
    for _ in range(count):
        (nl,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + nl].decode("utf-8")
        pos += nl
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        table.append((name, shape))
    tensors = {}
    for name, shape in table:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape)
        tensors[name] = arr.astype(np.float64)
        pos += 8 * n
    if pos != len(data):
        raise FormatError(f"{path}: trailing bytes in checkpoint")
    return tensors, meta
