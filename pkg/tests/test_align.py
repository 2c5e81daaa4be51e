import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from viewguided.align import DegenerateFitError, align_by_camera, icp, rigid_fit, rms_error
from viewguided.core import RigidTransform, rotation_about_axis
from viewguided.metrics import chamfer_distance
from viewguided.synth import ShapeSpec, sample_surface
from viewguided.view import CameraParams, backproject_depth, camera_from_view, render_depth


def random_rotation(rng, max_deg):
    return rotation_about_axis(rng.normal(size=3), rng.uniform(-max_deg, max_deg))


class TestCameraAlign:
    def test_inverse(self, rng):
        pts = rng.normal(size=(100, 3))
        cam = camera_from_view(33, 12, 2.5)
        back = align_by_camera(cam.world_to_camera().apply(pts), cam)
        np.testing.assert_allclose(back.points, pts, atol=1e-12)

    def test_identity_pose(self, rng):
        pts = rng.normal(size=(10, 3))
        cam = CameraParams(0, 0, 1, pose=RigidTransform.identity())
        np.testing.assert_array_equal(align_by_camera(pts, cam).points, pts)

    def test_backprojected_overlaps_gt(self):
        gt = sample_surface(ShapeSpec("sphere", {"radius": 1.0}), 20000, 0)
        cam = camera_from_view(0, 25, 2)
        splat = 1
        lifted = backproject_depth(cam, render_depth(cam, gt, splat), 784, frame="camera")
        world = align_by_camera(lifted, cam)
        # one-sided: every lifted point sits on the surface up to pixel quantisation
        _, d = __import__("viewguided.core", fromlist=["SpatialIndex"]).SpatialIndex(gt).query(world)
        px = 2.0 / cam.focal_px
        assert d.mean() < (2 * px) ** 2


class TestRigidFit:
    def test_identity(self, rng):
        pts = rng.normal(size=(20, 3))
        T = rigid_fit(pts, pts)
        np.testing.assert_allclose(T.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(T.translation, 0, atol=1e-12)

    def test_rotation_10deg(self, rng):
        pts = rng.normal(size=(30, 3))
        R = rotation_about_axis([0, 0, 1], 10)
        T = rigid_fit(pts, pts @ R.T)
        np.testing.assert_allclose(T.rotation, R, atol=1e-12)
        assert rms_error(T.apply(pts), pts @ R.T) < 1e-12

    def test_reflection_gives_proper_rotation(self, rng):
        pts = rng.normal(size=(30, 3))
        T = rigid_fit(pts, -pts)
        assert np.linalg.det(T.rotation) == pytest.approx(1.0)

    def test_collinear(self):
        pts = np.array([[i, 0, 0] for i in range(5)], dtype=float)
        with pytest.raises(DegenerateFitError):
            rigid_fit(pts, pts)

    def test_too_few(self):
        with pytest.raises(DegenerateFitError):
            rigid_fit(np.zeros((2, 3)), np.zeros((2, 3)))

    @given(st.integers(0, 10_000))
    def test_orthonormal(self, seed):
        r = np.random.default_rng(seed)
        a = r.normal(size=(10, 3))
        b = r.normal(size=(10, 3))
        R = rigid_fit(a, b).rotation
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


class TestICP:
    def test_same_cloud(self, rng):
        pts = rng.normal(size=(50, 3))
        res = icp(pts, pts)
        assert res.iters == 1
        np.testing.assert_allclose(res.transform.rotation, np.eye(3), atol=1e-12)
        assert res.rms == 0.0

    def test_recovers_15deg(self, rng):
        dst = rng.uniform(-1, 1, size=(200, 3))
        R = rotation_about_axis([0, 0, 1], 15)
        src = (dst - [0.1, 0, 0]) @ R  # dst = R src + t
        res = icp(src, dst, max_iters=100)
        assert res.rms < 1e-6

    def test_monotone_history(self, rng):
        for _ in range(10):
            dst = rng.uniform(-1, 1, size=(150, 3))
            src = dst @ random_rotation(rng, 170).T + rng.uniform(-0.3, 0.3, size=3)
            res = icp(src, dst, max_iters=40)
            h = np.array(res.history)
            assert np.all(np.diff(h) <= 0)

    def test_recovery_suite(self, rng):
        for _ in range(20):
            dst = rng.uniform(-1, 1, size=(200, 3))
            R = random_rotation(rng, 30)
            t = rng.uniform(-1, 1, size=3)
            t *= rng.uniform(0, 0.2) / np.linalg.norm(t)
            src = (dst - t) @ R
            assert icp(src, dst, max_iters=200).rms < 1e-6

    def test_needs_points(self):
        with pytest.raises(DegenerateFitError):
            icp(np.zeros((2, 3)), np.zeros((5, 3)))
