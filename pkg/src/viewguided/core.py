"""Geometric primitives shared by every stage: clouds, transforms, nearest
neighbours and farthest point sampling.

All distances are squared Euclidean unless a function says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

TAGS = ("partial", "reconstructed", "coarse", "complete", "ground-truth")


class DegenerateCloudError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """An ordered, immutable (n, 3) point array with an optional provenance tag."""

    points: np.ndarray
    tag: Optional[str] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        if self.tag is not None and self.tag not in TAGS:
            raise ValueError(f"unknown provenance tag {self.tag!r}")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __getitem__(self, i):
        return self.points[i]

    def with_tag(self, tag: Optional[str]) -> "PointCloud":
        return PointCloud(self.points, tag)


CloudLike = Union[PointCloud, np.ndarray, Sequence[Sequence[float]]]


def as_points(cloud: CloudLike) -> np.ndarray:
    """Return the (n, 3) float64 array behind ``cloud``."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 0:
        return pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
    return pts


def sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances between matching rows of ``a`` and ``b``.

    Every squared distance in the package goes through this expression so that
    independently computed values agree bit for bit.
    """
    d = a - b
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def pairwise_sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return sq_dist(a[:, None, :], b[None, :, :])


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def apply(self, pts: CloudLike) -> np.ndarray:
        return as_points(pts) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(np.array(d["rotation"]), np.array(d["translation"]))


def rotation_about_axis(axis: Sequence[float], degrees: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    th = np.deg2rad(degrees)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * (K @ K)


@dataclass(frozen=True)
class NormalizationRecord:
    """Maps a normalized cloud back to its original frame: ``x = center + scale * y``."""

    center: np.ndarray
    scale: float

    def apply(self, pts: CloudLike) -> np.ndarray:
        return (as_points(pts) - self.center) / self.scale

    def invert(self, pts: CloudLike) -> np.ndarray:
        return as_points(pts) * self.scale + self.center


def normalize_to_unit_sphere(
    cloud: CloudLike, center: Optional[Sequence[float]] = None
) -> tuple[PointCloud, NormalizationRecord]:
    """Center on the centroid (or ``center``) and scale the max radius to 1."""
    pts = as_points(cloud)
    if len(pts) == 0:
        raise ValueError("empty cloud")
    c = pts.mean(axis=0) if center is None else np.asarray(center, dtype=np.float64)
    radius = float(np.sqrt(sq_dist(pts, c).max()))
    if radius == 0.0:
        raise DegenerateCloudError("degenerate cloud")
    rec = NormalizationRecord(c.copy(), radius)
    tag = cloud.tag if isinstance(cloud, PointCloud) else None
    return PointCloud(rec.apply(pts), tag), rec


def merge(a: CloudLike, b: CloudLike, tag: Optional[str] = None) -> PointCloud:
    return PointCloud(np.concatenate([as_points(a), as_points(b)], axis=0), tag)


class SpatialIndex:
    """Exact nearest-neighbour index over a fixed cloud.

    Backed by a k-d tree for candidate generation; the final choice recomputes
    squared distances with :func:`sq_dist` and breaks ties by lowest index so
    results match an exhaustive scan exactly.
    """

    _K = 8

    def __init__(self, cloud: CloudLike, workers: int = 1):
        pts = as_points(cloud)
        if len(pts) == 0:
            raise ValueError("cannot index an empty cloud")
        self.points = _frozen(pts)
        self.workers = workers
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def nearest(self, q: Sequence[float]) -> tuple[int, float]:
        idx, d = self.query(np.asarray(q, dtype=np.float64).reshape(1, 3))
        return int(idx[0]), float(d[0])

    def query(self, queries: CloudLike) -> tuple[np.ndarray, np.ndarray]:
        """Nearest index and squared distance for every query row."""
        q = as_points(queries)
        n = len(self.points)
        if len(q) == 0:
            return np.zeros(0, dtype=np.intp), np.zeros(0)
        k = min(self._K, n)
        _, cand = self._tree.query(q, k=k, workers=self.workers)
        cand = np.asarray(cand).reshape(len(q), k)
        d2 = sq_dist(q[:, None, :], self.points[cand])
        best_d = d2.min(axis=1)
        # among candidates at the minimum distance, take the lowest index
        masked = np.where(d2 == best_d[:, None], cand, n)
        best_i = masked.min(axis=1)
        if k < n:
            # the k-th candidate bounds what the tree could have skipped; if it
            # ties the best (within tree rounding) rescan that query exhaustively
            slack = d2.max(axis=1) <= best_d * (1 + 1e-9) + 1e-300
            for j in np.flatnonzero(slack):
                dj = sq_dist(self.points, q[j])
                best_i[j] = int(np.argmin(dj))
                best_d[j] = dj[best_i[j]]
        return best_i.astype(np.intp), best_d


def brute_force_nearest(points: CloudLike, queries: CloudLike) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive nearest neighbours (lowest index on ties)."""
    p = as_points(points)
    q = as_points(queries)
    d2 = pairwise_sq_dist(q, p)
    idx = np.argmin(d2, axis=1)
    return idx, d2[np.arange(len(q)), idx]


def nearest(index: SpatialIndex, q: Sequence[float]) -> tuple[int, float]:
    return index.nearest(q)


def farthest_point_sample(cloud: CloudLike, k: int, seed_index: int = 0) -> list[int]:
    """Greedy max-min sampling; ties go to the lowest index."""
    pts = as_points(cloud)
    n = len(pts)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if not 0 <= seed_index < n:
        raise ValueError("seed_index out of range")
    selected = [seed_index]
    min_d = sq_dist(pts, pts[seed_index])
    min_d[seed_index] = -1.0
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d))
        selected.append(nxt)
        np.minimum(min_d, sq_dist(pts, pts[nxt]), out=min_d)
        min_d[nxt] = -1.0
    return selected


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator, the only RNG used by the package."""
    return np.random.Generator(np.random.PCG64(seed))


def random_halves(cloud: CloudLike, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split indices into two sorted halves; the first gets the extra point when odd."""
    n = len(as_points(cloud))
    if n < 2:
        raise ValueError("need at least 2 points to split")
    perm = make_rng(rng_seed).permutation(n)
    half = (n + 1) // 2
    return np.sort(perm[:half]), np.sort(perm[half:])
