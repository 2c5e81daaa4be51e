import numpy as np
import pytest

from viewguided.core import SpatialIndex
from viewguided.synth import (
    KINDS,
    FullyOccludedError,
    ScanConfig,
    ShapeSpec,
    SynthConfig,
    make_dataset,
    make_partial,
    make_record,
    random_shapes,
    read_dataset,
    sample_surface,
    visible_indices,
    write_dataset,
)
from viewguided.view import camera_from_view, project_points, render_depth, view_schedule

SPHERE = ShapeSpec("sphere", {"radius": 1.0})


def test_default_count():
    assert len(sample_surface(SPHERE)) == 2048


def test_sphere_radius():
    r = np.linalg.norm(sample_surface(SPHERE, 500, 3).points, axis=1)
    np.testing.assert_allclose(r, 1.0, atol=1e-9)


def test_box_face_counts():
    n = 60_000
    pts = sample_surface(ShapeSpec("box", {"size": [1.0, 1.0, 1.0]}), n, 0).points
    axis = np.argmax(np.abs(pts), axis=1)
    face = axis * 2 + (pts[np.arange(n), axis] > 0)
    counts = np.bincount(face, minlength=6)
    sigma = np.sqrt(n * (1 / 6) * (5 / 6))
    assert np.all(np.abs(counts - n / 6) <= 3 * sigma)


@pytest.mark.parametrize("kind", KINDS)
def test_all_kinds_normalised(kind):
    shape = random_shapes(6, 1)[KINDS.index(kind)]
    pts = sample_surface(shape, 4000, 2).points
    assert np.linalg.norm(pts, axis=1).max() <= 1 + 1e-9


def test_sample_deterministic():
    a = sample_surface(SPHERE, 100, 9).points
    b = sample_surface(SPHERE, 100, 9).points
    np.testing.assert_array_equal(a, b)


def test_invalid_shapes():
    with pytest.raises(ValueError):
        ShapeSpec("blob", {})
    with pytest.raises(ValueError):
        ShapeSpec("torus", {"major": 0.3, "minor": 0.5})


def test_plane_front_all_kept():
    g = np.linspace(-0.5, 0.5, 40)
    yy, zz = np.meshgrid(g, g)
    plane = np.stack([np.zeros(yy.size), yy.ravel(), zz.ravel()], axis=1)
    cam = camera_from_view(0, 0, 2)
    assert len(make_partial(plane, ScanConfig(cam, sigma=0.0))) == len(plane)


def test_sphere_visible_fraction():
    # from distance d the visible cap is {p : p.c/|c| >= 1/d}, a fraction (1 - 1/d)/2
    gt = sample_surface(SPHERE, 2048, 0)
    dense = sample_surface(SPHERE, 100_000, 1)
    for az, el in [(0, 0), (75, 30), (200, -40), (310, 10)]:
        cam = camera_from_view(az, el, 2)
        frac = len(make_partial(gt, ScanConfig(cam), 0, dense)) / len(gt)
        assert abs(frac - 0.25) <= 0.05


def test_full_occluder():
    cam = camera_from_view(0, 0, 2)
    with pytest.raises(FullyOccludedError, match="fully occluded"):
        make_partial(sample_surface(SPHERE, 200, 0), ScanConfig(cam, occluder=(0, 0, 224, 224)))


def test_noise_and_order():
    gt = sample_surface(SPHERE, 500, 0)
    cam = camera_from_view(0, 0, 2)
    idx = visible_indices(gt, ScanConfig(cam))
    assert np.all(np.diff(idx) > 0)
    noisy = make_partial(gt, ScanConfig(cam, sigma=0.01), 3)
    d = noisy.points - gt.points[idx]
    assert 0.005 < d.std() < 0.015


def test_visibility_consistency():
    gt = sample_surface(SPHERE, 2048, 0)
    dense = sample_surface(SPHERE, 100_000, 1)
    cfg = ScanConfig(camera_from_view(30, 20, 2))
    idx = visible_indices(gt, cfg, dense)
    zbuf = render_depth(cfg.camera, dense, cfg.splat_px)
    uvz = project_points(cfg.camera, gt.points[idx])
    z = zbuf[np.floor(uvz[:, 1]).astype(int), np.floor(uvz[:, 0]).astype(int)]
    assert np.all(uvz[:, 2] <= z + cfg.delta)


def test_dataset_counts_and_subsets():
    shapes = random_shapes(2, 0)
    cfg = SynthConfig(n_points=512, dense_points=20_000)
    recs = make_dataset(shapes, view_schedule(), cfg, 0, view_ids=[0, 7])
    assert len(recs) == 4
    for r in recs:
        np.testing.assert_array_equal(r.partial_a.points, r.gt.points[r.visible])
        assert np.all(np.linalg.norm(r.gt.points, axis=1) <= 1 + 1e-9)
        assert r.depth.shape == (224, 224)
        assert np.abs(r.partial_b.points - r.partial_a.points).max() < 0.1


def test_full_view_count():
    recs = make_dataset(random_shapes(1, 0), None, SynthConfig(n_points=128, dense_points=5000), 0)
    assert len(recs) == 24


def test_threads_do_not_change_output(tmp_path):
    shapes = random_shapes(3, 5)
    cfg = SynthConfig(n_points=256, dense_points=10_000)
    a = make_dataset(shapes, view_schedule(), cfg, 5, threads=1, view_ids=[1, 2])
    b = make_dataset(shapes, view_schedule(), cfg, 5, threads=3, view_ids=[1, 2])
    write_dataset(tmp_path / "a", a)
    write_dataset(tmp_path / "b", b)
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_dataset_roundtrip(tmp_path):
    recs = make_dataset(random_shapes(1, 2), view_schedule(), SynthConfig(n_points=256, dense_points=10_000), 2, view_ids=[3])
    write_dataset(tmp_path, recs)
    back = read_dataset(tmp_path)
    assert len(back) == 1
    np.testing.assert_array_equal(back[0].depth, recs[0].depth)
    assert back[0].camera == recs[0].camera
    np.testing.assert_allclose(back[0].gt.points, recs[0].gt.points, atol=1e-6)
    assert back[0].category == recs[0].category


def test_record_is_seeded():
    shape = random_shapes(1, 0)[0]
    cam = view_schedule()[0]
    cfg = SynthConfig(n_points=256, dense_points=10_000)
    a = make_record(shape, 0, cam, 0, cfg, 4)
    b = make_record(shape, 0, cam, 0, cfg, 4)
    np.testing.assert_array_equal(a.partial_b.points, b.partial_b.points)
