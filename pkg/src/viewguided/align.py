"""Registration of the reconstructed cloud into the partial cloud's frame."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CloudLike, PointCloud, RigidTransform, SpatialIndex, as_points
from .view import CameraParams


class DegenerateFitError(ValueError):
    pass


def align_by_camera(cloud: CloudLike, cam: CameraParams) -> PointCloud:
    """Map camera-frame points to world coordinates."""
    tag = cloud.tag if isinstance(cloud, PointCloud) else None
    return PointCloud(cam.camera_to_world().apply(as_points(cloud)), tag)


def rigid_fit(src_pts: CloudLike, dst_pts: CloudLike) -> RigidTransform:
    """Least-squares ``R, t`` with ``R @ src + t ~ dst`` (Kabsch, det(R) = +1)."""
    src = as_points(src_pts)
    dst = as_points(dst_pts)
    if src.shape != dst.shape:
        raise ValueError("point lists differ in length")
    if len(src) < 3:
        raise DegenerateFitError("need at least 3 point pairs")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    A = src - cs
    B = dst - cd
    sv_src = np.linalg.svd(A, compute_uv=False)
    scale = max(sv_src[0], 1e-300)
    if sv_src[1] <= 1e-10 * scale:
        raise DegenerateFitError("degenerate configuration: points are collinear")
    H = A.T @ B
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    # re-orthonormalise against accumulated rounding
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return RigidTransform(R, cd - R @ cs)


def rms_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


@dataclass
class ICPResult:
    transform: RigidTransform
    rms: float
    iters: int
    history: list = field(default_factory=list)


def icp(
    src: CloudLike,
    dst: CloudLike,
    max_iters: int = 50,
    tol: float = 1e-10,
    init: RigidTransform | None = None,
) -> ICPResult:
    """Point-to-point ICP moving ``src`` onto ``dst``.

    ``history`` holds the RMS of nearest-neighbour residuals after each
    iteration; it never increases.
    """
    s = as_points(src)
    d = as_points(dst)
    if len(s) < 3 or len(d) < 3:
        raise DegenerateFitError("ICP needs at least 3 points per cloud")
    index = SpatialIndex(d)
    T = init or RigidTransform.identity()
    moved = T.apply(s)
    nn, d2 = index.query(moved)
    rms = float(np.sqrt(np.mean(d2)))
    history = [rms]
    iters = 0
    for iters in range(1, max_iters + 1):
        step = rigid_fit(moved, d[nn])
        cand = step.compose(T)
        cand_moved = cand.apply(s)
        cand_nn, cand_d2 = index.query(cand_moved)
        cand_rms = float(np.sqrt(np.mean(cand_d2)))
        if cand_rms > rms:
            # rounding-level regressions: keep the better pose and stop
            break
        T, moved, nn = cand, cand_moved, cand_nn
        improvement = rms - cand_rms
        rms = cand_rms
        history.append(rms)
        if improvement < tol:
            break
    return ICPResult(T, rms, iters, history)
