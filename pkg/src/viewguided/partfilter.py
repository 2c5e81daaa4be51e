"""Coarse cloud construction and the fine/coarse split.

Points of the coarse cloud lying close to the partial scan form the *fine*
part (kept almost still during refinement); the rest form the *coarse* part.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    CloudLike,
    PointCloud,
    SpatialIndex,
    as_points,
    farthest_point_sample,
    random_halves,
)

DEFAULT_N_C = 1024


@dataclass(frozen=True)
class Partition:
    fine: np.ndarray
    coarse: np.ndarray
    d_thr: float

    def __post_init__(self):
        for name in ("fine", "coarse"):
            a = np.asarray(getattr(self, name), dtype=np.intp).reshape(-1)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def size(self) -> int:
        return len(self.fine) + len(self.coarse)

    def fine_mask(self, n: Optional[int] = None) -> np.ndarray:
        n = self.size if n is None else n
        m = np.zeros(n, dtype=bool)
        m[self.fine] = True
        return m

    def to_dict(self) -> dict:
        return {
            "fine": [int(i) for i in self.fine],
            "coarse": [int(i) for i in self.coarse],
            "d_thr": float(self.d_thr),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        return cls(np.array(d["fine"], dtype=np.intp), np.array(d["coarse"], dtype=np.intp), d["d_thr"])


def estimate_density_threshold(coarse: CloudLike, rng_seed: int = 0) -> float:
    """Mean squared NN distance across a seeded random halving of the cloud."""
    pts = as_points(coarse)
    a, b = random_halves(pts, rng_seed)
    _, da = SpatialIndex(pts[b]).query(pts[a])
    _, db = SpatialIndex(pts[a]).query(pts[b])
    return float(np.mean(np.concatenate([da, db])))


def build_coarse(merged: CloudLike, n_c: int = DEFAULT_N_C, seed_index: int = 0) -> PointCloud:
    pts = as_points(merged)
    if n_c > len(pts):
        raise ValueError(f"n_c={n_c} exceeds the {len(pts)} merged points")
    idx = farthest_point_sample(pts, n_c, seed_index)
    return PointCloud(pts[idx], "coarse")


def partial_distances(coarse: CloudLike, partial: CloudLike) -> np.ndarray:
    """``d(p)`` for every coarse point: squared distance to the nearest partial point."""
    _, d = SpatialIndex(partial).query(as_points(coarse))
    return d


def partition_fine_coarse(
    coarse: CloudLike,
    partial: CloudLike,
    d_thr: float,
    force_coarse_count: Optional[int] = None,
) -> Partition:
    """Fine = points with ``d(p) < d_thr``.

    ``force_coarse_count`` instead fixes the coarse part to the points with the
    largest ``d(p)`` (stable order on ties) and ignores the threshold.
    """
    if d_thr < 0:
        raise ValueError("d_thr must be non-negative")
    pts = as_points(coarse)
    if len(pts) == 0 or len(as_points(partial)) == 0:
        raise ValueError("empty cloud")
    d = partial_distances(pts, partial)
    if force_coarse_count is None:
        is_fine = d < d_thr
    else:
        if not 0 <= force_coarse_count <= len(pts):
            raise ValueError("force_coarse_count out of range")
        order = np.argsort(-d, kind="stable")
        is_fine = np.ones(len(pts), dtype=bool)
        is_fine[order[:force_coarse_count]] = False
    return Partition(np.flatnonzero(is_fine), np.flatnonzero(~is_fine), float(d_thr))
