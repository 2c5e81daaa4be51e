"""Pinhole cameras, depth rendering/back-projection and image-side features.

Conventions: world is right-handed with +z up; azimuth turns about +z starting
at +x, elevation is measured above the xy-plane. The camera frame has x to the
right, y down the image and z along the viewing direction. Pixel ``(row, col)``
covers ``u in [col, col+1)``, ``v in [row, row+1)``; its center sits at
``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import CloudLike, PointCloud, RigidTransform, as_points, make_rng

IMAGE_SIZE = 224
DEFAULT_FOCAL_PX = 168.0
PYRAMID_SIZES = (56, 28, 14, 7)
DEFAULT_CHANNELS = 8
DEFAULT_N_R = 784


class BehindCameraError(ValueError):
    pass


@dataclass(frozen=True)
class CameraParams:
    azimuth: float
    elevation: float
    distance: float
    focal_px: float = DEFAULT_FOCAL_PX
    principal_point: tuple[float, float] = (IMAGE_SIZE / 2, IMAGE_SIZE / 2)
    image_size: tuple[int, int] = (IMAGE_SIZE, IMAGE_SIZE)
    # explicit world-to-camera pose; overrides the orbit parameters when set
    pose: Optional[RigidTransform] = field(default=None, compare=True)

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("camera distance must be positive")
        if not self.focal_px > 0:
            raise ValueError("focal_px must be positive")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "principal_point", tuple(float(x) for x in self.principal_point))
        object.__setattr__(self, "image_size", (int(w), int(h)))

    @property
    def position(self) -> np.ndarray:
        if self.pose is not None:
            return self.pose.inverse().translation.copy()
        az, el = math.radians(self.azimuth), math.radians(self.elevation)
        return self.distance * np.array(
            [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
        )

    def world_to_camera(self) -> RigidTransform:
        if self.pose is not None:
            return self.pose
        c = self.position
        forward = -c / np.linalg.norm(c)
        up = np.array([0.0, 0.0, 1.0])
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-12:
            # looking straight up or down: fall back to +y as the up hint
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        return RigidTransform(R, -R @ c)

    def camera_to_world(self) -> RigidTransform:
        return self.world_to_camera().inverse()

    def to_dict(self) -> dict:
        d = {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "distance": self.distance,
            "focal_px": self.focal_px,
            "pp": list(self.principal_point),
            "size": list(self.image_size),
        }
        if self.pose is not None:
            d["pose"] = self.pose.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CameraParams":
        return cls(
            azimuth=float(d["azimuth"]),
            elevation=float(d["elevation"]),
            distance=float(d["distance"]),
            focal_px=float(d.get("focal_px", DEFAULT_FOCAL_PX)),
            principal_point=tuple(d.get("pp", (IMAGE_SIZE / 2, IMAGE_SIZE / 2))),
            image_size=tuple(d.get("size", (IMAGE_SIZE, IMAGE_SIZE))),
            pose=RigidTransform.from_dict(d["pose"]) if "pose" in d else None,
        )


def camera_from_view(azimuth: float, elevation: float, distance: float, **intrinsics) -> CameraParams:
    return CameraParams(azimuth, elevation, distance, **intrinsics)


def view_schedule(n_views: int = 24, elevation: float = 25.0, distance: float = 2.0) -> list[CameraParams]:
    """The fixed orbit used for dataset views: azimuths ``k * 360 / n_views``."""
    return [camera_from_view(k * 360.0 / n_views, elevation, distance) for k in range(n_views)]


def project_camera_frame(cam: CameraParams, pc: np.ndarray) -> np.ndarray:
    """Pinhole projection of camera-frame points to ``(u, v, depth)`` rows."""
    pc = np.asarray(pc, dtype=np.float64).reshape(-1, 3)
    z = pc[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError("behind camera")
    u0, v0 = cam.principal_point
    f = cam.focal_px
    return np.stack([u0 + f * pc[:, 0] / z, v0 + f * pc[:, 1] / z, z], axis=1)


def project_points(cam: CameraParams, pts: CloudLike) -> np.ndarray:
    return project_camera_frame(cam, cam.world_to_camera().apply(as_points(pts)))


def project(cam: CameraParams, p: Sequence[float]) -> tuple[float, float, float]:
    u, v, z = project_points(cam, np.asarray(p, dtype=np.float64).reshape(1, 3))[0]
    return float(u), float(v), float(z)


def _splat_offsets(splat_px: int) -> np.ndarray:
    lo = -((splat_px - 1) // 2)
    return np.arange(lo, lo + splat_px)


def render_depth(cam: CameraParams, cloud: CloudLike, splat_px: int = 1) -> np.ndarray:
    """Point z-buffer of shape ``(H, W)``; background pixels are ``+inf``.

    Points behind the camera are skipped.
    """
    if splat_px < 1:
        raise ValueError("splat_px must be >= 1")
    W, H = cam.image_size
    depth = np.full(H * W, np.inf)
    pc = cam.world_to_camera().apply(as_points(cloud))
    pc = pc[pc[:, 2] > 0]
    if len(pc) == 0:
        return depth.reshape(H, W)
    uvz = project_camera_frame(cam, pc)
    col = np.floor(uvz[:, 0]).astype(np.int64)
    row = np.floor(uvz[:, 1]).astype(np.int64)
    offs = _splat_offsets(splat_px)
    dr, dc = np.meshgrid(offs, offs, indexing="ij")
    rr = (row[:, None] + dr.reshape(1, -1)).reshape(-1)
    cc = (col[:, None] + dc.reshape(1, -1)).reshape(-1)
    zz = np.repeat(uvz[:, 2], splat_px * splat_px)
    ok = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
    np.minimum.at(depth, rr[ok] * W + cc[ok], zz[ok])
    return depth.reshape(H, W)


def backproject_pixels(
    cam: CameraParams, depth: np.ndarray, rows: np.ndarray, cols: np.ndarray, frame: str = "world"
) -> np.ndarray:
    """Lift pixel centers with their depth values to 3D."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    z = depth[rows, cols]
    u0, v0 = cam.principal_point
    f = cam.focal_px
    x = (cols + 0.5 - u0) * z / f
    y = (rows + 0.5 - v0) * z / f
    pc = np.stack([x, y, z], axis=1)
    if frame == "camera":
        return pc
    if frame == "world":
        return cam.camera_to_world().apply(pc)
    raise ValueError(f"unknown frame {frame!r}")


def backproject_depth(
    cam: CameraParams,
    depth: np.ndarray,
    n_r: int = DEFAULT_N_R,
    rng_seed: int = 0,
    frame: str = "world",
) -> PointCloud:
    """Deterministic stand-in for an image-to-point-cloud decoder.

    Draws ``n_r`` finite pixels uniformly (with replacement only when fewer are
    available) and lifts them to 3D, in pixel raster order.
    """
    depth = np.asarray(depth, dtype=np.float64)
    finite = np.flatnonzero(np.isfinite(depth).reshape(-1))
    if finite.size == 0:
        raise ValueError("depth image has no finite pixels")
    rng = make_rng(rng_seed)
    pick = np.sort(rng.choice(finite.size, size=n_r, replace=finite.size < n_r))
    flat = finite[pick]
    W = depth.shape[1]
    pts = backproject_pixels(cam, depth, flat // W, flat % W, frame)
    return PointCloud(pts, "reconstructed")


def image_from_depth(depth: np.ndarray, channels: int = DEFAULT_CHANNELS) -> np.ndarray:
    """Fixed ``(H, W, channels)`` image standing in for CNN input features.

    Channel 0 is inverse depth (0 on background); the others are directional
    derivatives of channel 0 at evenly spaced angles in ``[0, pi)``.
    """
    depth = np.asarray(depth, dtype=np.float64)
    inten = np.where(np.isfinite(depth), 1.0 / np.where(np.isfinite(depth), depth, 1.0), 0.0)
    gy, gx = np.gradient(inten)
    out = [inten]
    n_dir = channels - 1
    for k in range(n_dir):
        th = math.pi * k / n_dir
        out.append(math.cos(th) * gx + math.sin(th) * gy)
    return np.stack(out, axis=-1)


def _avg_pool(a: np.ndarray, k: int) -> np.ndarray:
    H, W, C = a.shape
    return a.reshape(H // k, k, W // k, k, C).mean(axis=(1, 3))


@dataclass(frozen=True)
class FeaturePyramid:
    levels: tuple

    def __post_init__(self):
        sizes = tuple(l.shape[0] for l in self.levels)
        if sizes != PYRAMID_SIZES or any(l.shape[0] != l.shape[1] for l in self.levels):
            raise ValueError(f"pyramid levels must be {PYRAMID_SIZES}, got {sizes}")
        if len({l.shape[2] for l in self.levels}) != 1:
            raise ValueError("all levels must share the channel count")

    @property
    def channels(self) -> int:
        return self.levels[0].shape[2]


def build_feature_pyramid(image: np.ndarray) -> FeaturePyramid:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    if image.shape[:2] != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"image must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {image.shape[:2]}")
    levels = [_avg_pool(image, 4)]
    while len(levels) < len(PYRAMID_SIZES):
        levels.append(_avg_pool(levels[-1], 2))
    return FeaturePyramid(tuple(levels))


def bilinear_sample(grid: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``grid[(row, col)]`` at continuous node coordinates, clamped to the border."""
    S_y, S_x = grid.shape[:2]
    x = np.clip(x, 0.0, S_x - 1)
    y = np.clip(y, 0.0, S_y - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, S_x - 1)
    y1 = np.minimum(y0 + 1, S_y - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    # nested lerps: exact on constant grids and at nodes
    top = grid[y0, x0] + fx * (grid[y0, x1] - grid[y0, x0])
    bot = grid[y1, x0] + fx * (grid[y1, x1] - grid[y1, x0])
    return top + fy * (bot - top)


def perceptual_pool(pyr: FeaturePyramid, cam: CameraParams, cloud: CloudLike) -> np.ndarray:
    """Per-point features ``(n, 4 * C)`` bilinearly sampled at each projection."""
    uvz = project_points(cam, cloud)
    W, H = cam.image_size
    feats = []
    for level in pyr.levels:
        S = level.shape[0]
        x = uvz[:, 0] * (S / W) - 0.5
        y = uvz[:, 1] * (S / H) - 0.5
        feats.append(bilinear_sample(level, x, y))
    return np.concatenate(feats, axis=1)


def grid_feature(n: int) -> np.ndarray:
    """First ``n`` nodes, row-major, of a ceil(sqrt(n))^2 grid over ``[-1, 1]^2``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    g = math.isqrt(n - 1) + 1
    ticks = np.linspace(-1.0, 1.0, g) if g > 1 else np.array([-1.0])
    yy, xx = np.meshgrid(ticks, ticks, indexing="ij")
    return np.stack([xx.reshape(-1), yy.reshape(-1)], axis=1)[:n]


@dataclass(frozen=True)
class EncoderParams:
    """Shared per-point map ``3 -> 64 -> 128 -> dim`` followed by a max-pool."""

    weights: tuple
    biases: tuple

    @property
    def dim(self) -> int:
        return self.weights[-1].shape[1]

    def named(self, prefix: str = "encoder") -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out

    @classmethod
    def from_named(cls, d: dict, prefix: str = "encoder") -> "EncoderParams":
        n = sum(1 for k in d if k.startswith(prefix + ".w"))
        return cls(tuple(d[f"{prefix}.w{i}"] for i in range(n)), tuple(d[f"{prefix}.b{i}"] for i in range(n)))


def init_encoder(seed: int = 0, dim: int = 128, hidden: Sequence[int] = (64, 128)) -> EncoderParams:
    rng = make_rng(seed)
    sizes = [3, *hidden, dim]
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = 1.0 / math.sqrt(fan_in)
        ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(rng.uniform(-lim, lim, size=fan_out))
    return EncoderParams(tuple(ws), tuple(bs))


def point_embeddings(cloud: CloudLike, enc: EncoderParams) -> np.ndarray:
    h = as_points(cloud)
    last = len(enc.weights) - 1
    for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def global_point_feature(cloud: CloudLike, enc: EncoderParams) -> np.ndarray:
    pts = as_points(cloud)
    if len(pts) == 0:
        raise ValueError("empty cloud")
    return point_embeddings(pts, enc).max(axis=0)
