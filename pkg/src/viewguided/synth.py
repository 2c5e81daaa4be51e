"""Desk-scale stand-in for a view-guided completion dataset.

Parametric shapes are normalised into the unit bounding sphere, rendered from a
fixed 24-view orbit and scanned from a second camera with self-occlusion,
an image-space occluder and (for the second partial cloud) Gaussian noise.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import CloudLike, PointCloud, as_points, normalize_to_unit_sphere, rotation_about_axis
from .io import (
    dump_json,
    load_json,
    quantize_depth,
    read_camera,
    read_depth_pgm,
    read_ply,
    write_camera,
    write_depth_pgm,
    write_ply,
)
from .view import CameraParams, camera_from_view, project_camera_frame, render_depth, view_schedule

KINDS = ("sphere", "box", "cylinder", "cone", "torus", "composite")
GT_POINTS = 2048
DENSE_POINTS = 100000
DEFAULT_SPLAT = 3
DEFAULT_DELTA = 0.05
DEFAULT_SIGMA = 0.01


class FullyOccludedError(ValueError):
    pass


@dataclass(frozen=True)
class ShapeSpec:
    """A primitive (or union of boxes) plus an orientation.

    ``params`` per kind: sphere ``radius``; box ``size`` (3 edge lengths);
    cylinder and cone ``radius``, ``height`` (axis +z, cone apex up); torus
    ``major``, ``minor``; composite ``boxes`` as ``[(center, size), ...]``.
    """

    kind: str
    params: dict
    rotation_deg: tuple = (0.0, 0.0, 0.0)  # successive rotations about x, y, z

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        p = self.params
        if self.kind == "composite":
            boxes = p.get("boxes", [])
            if not 1 <= len(boxes) <= 6:
                raise ValueError("a composite needs 1 to 6 boxes")
            if any(min(s) <= 0 for _, s in boxes):
                raise ValueError("box sizes must be positive")
        else:
            vals = [v for v in p.values()]
            flat = [x for v in vals for x in (v if isinstance(v, (list, tuple)) else [v])]
            if not flat or min(flat) <= 0:
                raise ValueError("shape dimensions must be positive")
            if self.kind == "torus" and p["minor"] >= p["major"]:
                raise ValueError("torus minor radius must be below the major radius")

    def rotation(self) -> np.ndarray:
        rx, ry, rz = self.rotation_deg
        return (
            rotation_about_axis((0, 0, 1), rz)
            @ rotation_about_axis((0, 1, 0), ry)
            @ rotation_about_axis((1, 0, 0), rx)
        )

    def to_dict(self) -> dict:
        params = dict(self.params)
        if self.kind == "composite":
            params["boxes"] = [[list(c), list(s)] for c, s in params["boxes"]]
        return {"kind": self.kind, "params": params, "rotation_deg": list(self.rotation_deg)}

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeSpec":
        params = dict(d["params"])
        if d["kind"] == "composite":
            params["boxes"] = [(tuple(c), tuple(s)) for c, s in params["boxes"]]
        return cls(d["kind"], params, tuple(d.get("rotation_deg", (0, 0, 0))))


def _disk(rng, n, radius):
    r = radius * np.sqrt(rng.random(n))
    th = 2 * np.pi * rng.random(n)
    return r * np.cos(th), r * np.sin(th)


def _box_triangles(center, size) -> np.ndarray:
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(size, dtype=np.float64) / 2
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * h + c
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, cc, d in quads:
        tris.append(corners[[a, b, cc]])
        tris.append(corners[[a, cc, d]])
    return np.array(tris)


def _triangle_table(shape: ShapeSpec) -> np.ndarray:
    return np.concatenate([_box_triangles(c, s) for c, s in shape.params["boxes"]])


def _triangle_areas(tris: np.ndarray) -> np.ndarray:
    return 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)


def _sample_raw(shape: ShapeSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    p = shape.params
    k = shape.kind
    if k == "sphere":
        v = rng.normal(size=(n, 3))
        return p["radius"] * v / np.linalg.norm(v, axis=1, keepdims=True)
    if k == "box":
        sx, sy, sz = p["size"]
        areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        uv = rng.random((n, 3)) - 0.5
        pts = uv * np.array([sx, sy, sz])
        axis = face // 2
        sign = np.where(face % 2 == 0, -0.5, 0.5)
        pts[np.arange(n), axis] = sign * np.array([sx, sy, sz])[axis]
        return pts
    if k == "cylinder":
        r, h = p["radius"], p["height"]
        areas = np.array([2 * np.pi * r * h, np.pi * r * r, np.pi * r * r])
        part = rng.choice(3, size=n, p=areas / areas.sum())
        th = 2 * np.pi * rng.random(n)
        z = (rng.random(n) - 0.5) * h
        pts = np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)
        caps = part > 0
        dx, dy = _disk(rng, int(caps.sum()), r)
        pts[caps] = np.stack([dx, dy, np.where(part[caps] == 1, -h / 2, h / 2)], axis=1)
        return pts
    if k == "cone":
        r, h = p["radius"], p["height"]
        slant = math.hypot(r, h)
        areas = np.array([np.pi * r * slant, np.pi * r * r])
        part = rng.choice(2, size=n, p=areas / areas.sum())
        # lateral: distance from apex grows like sqrt(u) for uniform area
        t = np.sqrt(rng.random(n))
        th = 2 * np.pi * rng.random(n)
        pts = np.stack([t * r * np.cos(th), t * r * np.sin(th), h / 2 - t * h], axis=1)
        base = part == 1
        dx, dy = _disk(rng, int(base.sum()), r)
        pts[base] = np.stack([dx, dy, np.full(dx.shape, -h / 2)], axis=1)
        return pts
    if k == "torus":
        R, r = p["major"], p["minor"]
        out = np.empty((0, 3))
        while len(out) < n:
            m = 2 * (n - len(out)) + 16
            th = 2 * np.pi * rng.random(m)
            ph = 2 * np.pi * rng.random(m)
            keep = rng.random(m) < (R + r * np.cos(th)) / (R + r)
            th, ph = th[keep], ph[keep]
            ring = R + r * np.cos(th)
            out = np.concatenate([out, np.stack([ring * np.cos(ph), ring * np.sin(ph), r * np.sin(th)], axis=1)])
        return out[:n]
    tris = _triangle_table(shape)
    areas = _triangle_areas(tris)
    which = rng.choice(len(tris), size=n, p=areas / areas.sum())
    u = rng.random(n)
    v = rng.random(n)
    su = np.sqrt(u)
    w0, w1, w2 = 1 - su, su * (1 - v), su * v
    t = tris[which]
    return w0[:, None] * t[:, 0] + w1[:, None] * t[:, 1] + w2[:, None] * t[:, 2]


def surface_frame(shape: ShapeSpec) -> tuple[np.ndarray, float]:
    """Analytic area-weighted surface centroid and the surface's max distance from it."""
    p = shape.params
    k = shape.kind
    zero = np.zeros(3)
    if k == "sphere":
        return zero, float(p["radius"])
    if k == "box":
        return zero, float(np.linalg.norm(p["size"]) / 2)
    if k == "cylinder":
        return zero, math.hypot(p["radius"], p["height"] / 2)
    if k == "torus":
        return zero, float(p["major"] + p["minor"])
    if k == "cone":
        r, h = p["radius"], p["height"]
        lat = np.pi * r * math.hypot(r, h)
        base = np.pi * r * r
        cz = (lat * (-h / 2 + h / 3) + base * (-h / 2)) / (lat + base)
        c = np.array([0.0, 0.0, cz])
        return c, max(h / 2 - cz, math.hypot(r, -h / 2 - cz))
    tris = _triangle_table(shape)
    areas = _triangle_areas(tris)
    c = (areas[:, None] * tris.mean(axis=1)).sum(axis=0) / areas.sum()
    return c, float(np.linalg.norm(tris.reshape(-1, 3) - c, axis=1).max())


def sample_surface(shape: ShapeSpec, n: int = GT_POINTS, rng_seed=0) -> PointCloud:
    """Area-uniform surface samples, normalised into the shape's unit bounding sphere.

    The normalisation comes from the analytic surface (centroid and max radius),
    so every sample of one shape shares the same frame.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed) if not isinstance(rng_seed, np.random.Generator) else rng_seed
    raw = _sample_raw(shape, n, rng)
    c, radius = surface_frame(shape)
    pts = ((raw - c) / radius) @ shape.rotation().T
    return PointCloud(pts, "ground-truth")


@dataclass(frozen=True)
class ScanConfig:
    camera: CameraParams
    occluder: Optional[tuple] = None  # (u_min, v_min, u_max, v_max) in pixels
    sigma: float = 0.0
    delta: float = DEFAULT_DELTA
    splat_px: int = DEFAULT_SPLAT

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")


def visible_indices(gt: CloudLike, cfg: ScanConfig, surface: Optional[CloudLike] = None) -> np.ndarray:
    """Indices of ``gt`` points seen by the scanner, in their original order.

    The z-buffer is splatted from ``surface`` (a dense sample of the same shape)
    when given, else from ``gt`` itself. A 2048-point cloud leaves holes at
    small splats that let back faces through, so pass ``surface`` unless
    ``gt`` is itself dense.
    """
    pts = as_points(gt)
    cam = cfg.camera
    zbuf = render_depth(cam, pts if surface is None else surface, cfg.splat_px)
    pc = cam.world_to_camera().apply(pts)
    front = pc[:, 2] > 0
    keep = np.zeros(len(pts), dtype=bool)
    if not front.any():
        return np.flatnonzero(keep)
    uvz = project_camera_frame(cam, pc[front])
    W, H = cam.image_size
    col = np.floor(uvz[:, 0]).astype(np.int64)
    row = np.floor(uvz[:, 1]).astype(np.int64)
    inside = (col >= 0) & (col < W) & (row >= 0) & (row < H)
    ok = np.zeros(len(uvz), dtype=bool)
    ok[inside] = uvz[inside, 2] <= zbuf[row[inside], col[inside]] + cfg.delta
    if cfg.occluder is not None:
        u0, v0, u1, v1 = cfg.occluder
        hidden = (uvz[:, 0] >= u0) & (uvz[:, 0] < u1) & (uvz[:, 1] >= v0) & (uvz[:, 1] < v1)
        ok &= ~hidden
    keep[np.flatnonzero(front)[ok]] = True
    return np.flatnonzero(keep)


def make_partial(gt: CloudLike, cfg: ScanConfig, rng_seed=0, surface: Optional[CloudLike] = None) -> PointCloud:
    idx = visible_indices(gt, cfg, surface)
    if idx.size == 0:
        raise FullyOccludedError("fully occluded")
    pts = as_points(gt)[idx]
    if cfg.sigma > 0:
        rng = np.random.default_rng(rng_seed) if not isinstance(rng_seed, np.random.Generator) else rng_seed
        pts = pts + rng.normal(scale=cfg.sigma, size=pts.shape)
    return PointCloud(pts, "partial")


@dataclass
class SampleRecord:
    gt: PointCloud
    partial_a: PointCloud
    partial_b: PointCloud
    camera: CameraParams
    depth: np.ndarray
    shape_id: int
    view_id: int
    category: str = ""
    scan_camera: Optional[CameraParams] = None
    visible: Optional[np.ndarray] = None
    shape: Optional[ShapeSpec] = None
    meta: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return f"s{self.shape_id:04d}_v{self.view_id:02d}"


def random_shape(rng: np.random.Generator, kind: Optional[str] = None) -> ShapeSpec:
    kind = kind or KINDS[int(rng.integers(len(KINDS)))]
    rot = tuple(float(x) for x in rng.uniform(-30, 30, size=3))
    if kind == "sphere":
        params = {"radius": float(rng.uniform(0.5, 1.5))}
    elif kind == "box":
        params = {"size": [float(x) for x in rng.uniform(0.3, 1.5, size=3)]}
    elif kind in ("cylinder", "cone"):
        params = {"radius": float(rng.uniform(0.2, 0.8)), "height": float(rng.uniform(0.4, 1.6))}
    elif kind == "torus":
        major = float(rng.uniform(0.6, 1.0))
        params = {"major": major, "minor": float(rng.uniform(0.15, 0.45) * major)}
    else:
        boxes = []
        for _ in range(int(rng.integers(2, 7))):
            boxes.append(
                (
                    tuple(float(x) for x in rng.uniform(-0.5, 0.5, size=3)),
                    tuple(float(x) for x in rng.uniform(0.1, 0.7, size=3)),
                )
            )
        params = {"boxes": boxes}
    return ShapeSpec(kind, params, rot)


def random_shapes(n: int, seed: int = 0) -> list[ShapeSpec]:
    """``n`` shapes cycling through every kind so categories stay balanced."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A9E]))
    return [random_shape(rng, KINDS[i % len(KINDS)]) for i in range(n)]


def random_occluder(rng: np.random.Generator, size=(224, 224)) -> tuple:
    """Axis-aligned rectangle covering 10-30% of the frame."""
    W, H = size
    frac = rng.uniform(0.10, 0.30)
    aspect = rng.uniform(0.5, 2.0)
    w = min(W, math.sqrt(frac * W * H * aspect))
    h = min(H, frac * W * H / w)
    u0 = rng.uniform(0, W - w)
    v0 = rng.uniform(0, H - h)
    return (float(u0), float(v0), float(u0 + w), float(v0 + h))


@dataclass(frozen=True)
class SynthConfig:
    n_points: int = GT_POINTS
    dense_points: int = DENSE_POINTS
    sigma: float = DEFAULT_SIGMA
    delta: float = DEFAULT_DELTA
    splat_px: int = DEFAULT_SPLAT
    scan_distance: float = 2.0
    occluder: bool = True


def _stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def dense_surface(shape: ShapeSpec, shape_id: int, seed: int, n: int = DENSE_POINTS) -> PointCloud:
    return sample_surface(shape, n, _stream(seed, shape_id, 1_000_000))


def make_record(
    shape: ShapeSpec,
    shape_id: int,
    view: CameraParams,
    view_id: int,
    cfg: SynthConfig = SynthConfig(),
    seed: int = 0,
    dense: Optional[PointCloud] = None,
) -> SampleRecord:
    """One dataset sample. The depth map is stored quantised as on disk."""
    rng = _stream(seed, shape_id, view_id)
    dense = dense if dense is not None else dense_surface(shape, shape_id, seed, cfg.dense_points)
    gt = sample_surface(shape, cfg.n_points, rng)
    depth = quantize_depth(render_depth(view, dense, cfg.splat_px))
    for _ in range(16):
        scan_cam = camera_from_view(
            (view.azimuth + rng.uniform(90.0, 270.0)) % 360.0,
            float(rng.uniform(0.0, 40.0)),
            cfg.scan_distance,
        )
        occ = random_occluder(rng, scan_cam.image_size) if cfg.occluder else None
        scan = ScanConfig(scan_cam, occ, cfg.sigma, cfg.delta, cfg.splat_px)
        idx = visible_indices(gt, scan, dense)
        if idx.size >= 16:
            break
    else:
        raise FullyOccludedError("fully occluded")
    partial_a = PointCloud(gt.points[idx], "partial")
    noise = rng.normal(scale=cfg.sigma, size=partial_a.points.shape) if cfg.sigma > 0 else 0.0
    partial_b = PointCloud(partial_a.points + noise, "partial")
    return SampleRecord(
        gt=gt,
        partial_a=partial_a,
        partial_b=partial_b,
        camera=view,
        depth=depth,
        shape_id=shape_id,
        view_id=view_id,
        category=shape.kind,
        scan_camera=scan_cam,
        visible=idx,
        shape=shape,
        meta={"occluder": occ, "sigma": cfg.sigma},
    )


def make_dataset(
    shapes: Sequence[ShapeSpec],
    views: Optional[Sequence[CameraParams]] = None,
    cfg: SynthConfig = SynthConfig(),
    rng_seed: int = 0,
    threads: int = 1,
    view_ids: Optional[Sequence[int]] = None,
) -> list[SampleRecord]:
    """``len(shapes) * len(view_ids)`` records, ordered by shape then view.

    Every record draws from its own stream keyed by ``(seed, shape, view)``, so
    the thread count never changes the output.
    """
    if not shapes:
        raise ValueError("no shapes given")
    views = list(views) if views is not None else view_schedule()
    view_ids = list(view_ids) if view_ids is not None else list(range(len(views)))

    def build_shape(i: int) -> list[SampleRecord]:
        dense = dense_surface(shapes[i], i, rng_seed, cfg.dense_points)
        return [make_record(shapes[i], i, views[v], v, cfg, rng_seed, dense) for v in view_ids]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            groups = list(pool.map(build_shape, range(len(shapes))))
    else:
        groups = [build_shape(i) for i in range(len(shapes))]
    return [r for g in groups for r in g]


def write_record(root: Path, rec: SampleRecord) -> Path:
    d = Path(root) / rec.name
    d.mkdir(parents=True, exist_ok=True)
    write_ply(d / "gt.ply", rec.gt)
    write_ply(d / "partial_a.ply", rec.partial_a)
    write_ply(d / "partial_b.ply", rec.partial_b)
    write_depth_pgm(d / "depth.pgm", rec.depth)
    write_camera(d / "camera.json", rec.camera)
    meta = {
        "shape_id": rec.shape_id,
        "view_id": rec.view_id,
        "category": rec.category,
        "shape": rec.shape.to_dict() if rec.shape else None,
        "scan_camera": rec.scan_camera.to_dict() if rec.scan_camera else None,
        "visible": [int(i) for i in rec.visible] if rec.visible is not None else None,
        **rec.meta,
    }
    dump_json(d / "meta.json", meta)
    return d


def write_dataset(root, records: Sequence[SampleRecord], extra: Optional[dict] = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        write_record(root, rec)
        entries.append({"dir": rec.name, "shape_id": rec.shape_id, "view_id": rec.view_id, "category": rec.category})
    dump_json(root / "index.json", {"version": 1, "records": entries, **(extra or {})})
    return root


def read_record(d) -> SampleRecord:
    d = Path(d)
    meta = load_json(d / "meta.json")
    camera = read_camera(d / "camera.json")
    scan = meta.get("scan_camera")
    shape = meta.get("shape")
    return SampleRecord(
        gt=read_ply(d / "gt.ply").with_tag("ground-truth"),
        partial_a=read_ply(d / "partial_a.ply").with_tag("partial"),
        partial_b=read_ply(d / "partial_b.ply").with_tag("partial"),
        camera=camera,
        depth=read_depth_pgm(d / "depth.pgm"),
        shape_id=int(meta["shape_id"]),
        view_id=int(meta["view_id"]),
        category=meta.get("category", ""),
        scan_camera=CameraParams.from_dict(scan) if scan else None,
        visible=np.array(meta["visible"], dtype=np.intp) if meta.get("visible") is not None else None,
        shape=ShapeSpec.from_dict(shape) if shape else None,
        meta={k: meta[k] for k in ("occluder", "sigma") if k in meta},
    )


def read_dataset(root) -> list[SampleRecord]:
    root = Path(root)
    index = load_json(root / "index.json")
    return [read_record(root / e["dir"]) for e in index["records"]]
