"""Camera projection, undistortion, laser plane fitting and triangulation."""

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from conftest import random_camera
from sprayscan.errors import (BehindCamera, CalibrationError, CollinearPoints, DegenerateCamera,
                              DegenerateProjection, NoConvergence, ParallelRay, TooFewPoints)
from sprayscan.geometry import (CameraModel, LaserPlane, Ray, backproject, calibrate_laser_plane,
                                calibration_from_dict, calibration_to_dict, intersect_ray_plane,
                                intersect_rays, load_calibration, project, save_calibration,
                                triangulate, undistort)

NORMALIZED = CameraModel(np.hstack([np.eye(3), np.zeros((3, 1))]), 640, 480)


def root_ray_plane(origin, direction, normal, offset, t_hi=1e6):
    """Root of n.(o + t d) - d along t by bracketed 1-D root finding."""
    f = lambda t: normal @ (origin + t * direction) - offset
    return brentq(f, 0.0, t_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


class TestProject:
    def test_normalized_camera(self):
        np.testing.assert_allclose(project(NORMALIZED, [0.2, 0.4, 2.0]), [0.1, 0.2], atol=1e-15)

    def test_optical_axis_hits_principal_point(self):
        np.testing.assert_allclose(project(NORMALIZED, [0.0, 0.0, 1.0]), [0.0, 0.0], atol=1e-15)

    def test_principal_plane_is_degenerate(self):
        with pytest.raises(DegenerateProjection):
            project(NORMALIZED, [1.0, 2.0, 0.0])

    def test_random_h_matches_direct_product(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            H = rng.normal(size=(3, 4))
            cam = CameraModel(H, 100, 100)
            P = rng.normal(size=3)
            hom = [sum(H[r, c] * P[c] for c in range(3)) + H[r, 3] for r in range(3)]
            if abs(hom[2]) < 1e-6:
                continue
            np.testing.assert_allclose(project(cam, P), [hom[0] / hom[2], hom[1] / hom[2]],
                                       rtol=1e-9, atol=1e-9)

    def test_rank_deficient_camera(self):
        H = np.zeros((3, 4))
        H[0, 0] = H[1, 1] = 1.0
        with pytest.raises(DegenerateCamera):
            CameraModel(H, 10, 10)

    def test_sign_of_h_is_normalised(self):
        rng = np.random.default_rng(2)
        cam = random_camera(rng)
        flipped = CameraModel(-cam.projection, cam.width, cam.height)
        np.testing.assert_allclose(flipped.center, cam.center)
        P = cam.center + 2.0 * backproject(cam, [100.0, 100.0]).direction
        np.testing.assert_allclose(project(flipped, P), [100.0, 100.0], atol=1e-9)

    def test_intrinsics_recovered(self):
        K = np.array([[800.0, 0.5, 320.0], [0.0, 780.0, 240.0], [0.0, 0.0, 1.0]])
        R = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [-1.0, 0.0, 0.0]])
        cam = CameraModel.from_intrinsics(K, R, [0.0, 0.0, 1.0], 640, 480)
        np.testing.assert_allclose(cam.intrinsics, K, atol=1e-9)
        np.testing.assert_allclose(cam.center, [1.0, 0.0, 0.0], atol=1e-12)


class TestBackproject:
    def test_principal_ray(self):
        ray = backproject(NORMALIZED, [0.0, 0.0])
        np.testing.assert_allclose(ray.origin, [0, 0, 0], atol=1e-15)
        np.testing.assert_allclose(ray.direction, [0, 0, 1], atol=1e-15)

    def test_direction_is_unit(self):
        cam = random_camera(np.random.default_rng(3))
        ray = backproject(cam, np.array([[0.0, 0.0], [639.0, 479.0], [320.0, 10.0]]))
        np.testing.assert_allclose(np.linalg.norm(ray.direction, axis=1), 1.0, atol=1e-12)

    def test_hundred_random_pixels_round_trip(self):
        rng = np.random.default_rng(4)
        cam = random_camera(rng)
        px = rng.uniform([0, 0], [cam.width, cam.height], size=(100, 2))
        ray = backproject(cam, px)
        for t in (0.1, 1.0, 7.5):
            np.testing.assert_allclose(project(cam, ray.at(np.full(100, t))), px, atol=1e-6)

    @given(seed=st.integers(0, 2**32 - 1), u=st.floats(-100, 740), v=st.floats(-100, 580),
           t=st.floats(0.01, 50.0))
    def test_round_trip_property(self, seed, u, v, t):
        cam = random_camera(np.random.default_rng(seed))
        ray = backproject(cam, [u, v])
        assert np.allclose(project(cam, ray.at(t)), [u, v], atol=1e-6)


class TestUndistort:
    def test_identity_without_coefficients(self):
        np.testing.assert_array_equal(undistort(NORMALIZED, [10.0, 20.0]), [10.0, 20.0])

    @given(seed=st.integers(0, 2**32 - 1), u=st.floats(0, 639), v=st.floats(0, 479))
    def test_round_trip(self, seed, u, v):
        rng = np.random.default_rng(seed)
        dist = (rng.uniform(-0.3, 0.1), rng.uniform(-0.05, 0.05), rng.uniform(-1e-3, 1e-3),
                rng.uniform(-1e-3, 1e-3))
        cam = random_camera(rng, dist)
        observed = cam.distort(np.array([u, v]))
        np.testing.assert_allclose(undistort(cam, observed), [u, v], atol=1e-6)

    def test_barrel_edge_pixel_matches_bisection(self):
        K = np.array([[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]])
        cam = CameraModel.from_intrinsics(K, np.eye(3), np.zeros(3), 640, 480, (-0.2, 0, 0, 0))
        observed = np.array([639.0, 479.0])
        xd, yd = (observed - [320.0, 240.0]) / 500.0
        rd = math.hypot(xd, yd)
        # radial-only model: rd = r (1 + k1 r^2); solve for r on the branch through 0
        r = brentq(lambda r: r * (1 - 0.2 * r * r) - rd, 0.0, 1.0, xtol=1e-15)
        expected = np.array([320.0, 240.0]) + 500.0 * np.array([xd, yd]) * (r / rd)
        np.testing.assert_allclose(undistort(cam, observed), expected, atol=1e-6)

    def test_no_convergence_outside_model(self):
        K = np.array([[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]])
        cam = CameraModel.from_intrinsics(K, np.eye(3), np.zeros(3), 640, 480, (-5.0, 3.0, 0, 0))
        with pytest.raises(NoConvergence):
            undistort(cam, [639.0, 479.0])

    def test_vectorised(self):
        rng = np.random.default_rng(5)
        cam = random_camera(rng, (-0.1, 0.01, 1e-4, -2e-4))
        px = rng.uniform([0, 0], [640, 480], size=(50, 2))
        np.testing.assert_allclose(undistort(cam, cam.distort(px)), px, atol=1e-6)


class TestLaserPlane:
    def test_coordinate_plane(self):
        plane = calibrate_laser_plane([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
        np.testing.assert_allclose(np.abs(plane.normal), [0, 0, 1], atol=1e-12)
        assert plane.offset == pytest.approx(0.0, abs=1e-12)

    def test_analytic_plane(self):
        plane = calibrate_laser_plane([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
        np.testing.assert_allclose(plane.normal, np.ones(3) / math.sqrt(3), atol=1e-12)
        assert plane.offset == pytest.approx(1 / math.sqrt(3), abs=1e-12)

    def test_normal_faces_camera(self):
        pts = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
        plane = calibrate_laser_plane(pts, toward=[0, 0, 0])
        np.testing.assert_allclose(plane.normal, -np.ones(3) / math.sqrt(3), atol=1e-12)

    def test_too_few_and_collinear(self):
        with pytest.raises(TooFewPoints):
            calibrate_laser_plane([[0, 0, 0], [1, 0, 0]])
        with pytest.raises(CollinearPoints):
            calibrate_laser_plane([[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3]])
        with pytest.raises(ValueError):
            calibrate_laser_plane([[0, 0, 0], [0, 0, 0], [0, 1, 0]])

    def test_noisy_fit_matches_grid_search(self):
        rng = np.random.default_rng(6)
        n_true = unit([0.3, -0.2, 1.0])
        basis = np.linalg.svd(n_true[None, :])[2][1:]
        pts = rng.uniform(-1, 1, (50, 2)) @ basis + 0.5 * n_true + rng.normal(0, 0.01, (50, 1)) * n_true
        fit = calibrate_laser_plane(pts, toward=n_true * 10)

        def cost(n):
            c = pts.mean(axis=0)
            return np.sum(((pts - c) @ n) ** 2)

        # brute-force over a hemisphere around +n_true, then refine twice
        best = n_true
        span = 0.3
        for _ in range(3):
            th = np.linspace(-span, span, 121)
            tx, ty = np.meshgrid(th, th)
            cands = best + tx[..., None] * basis[0] + ty[..., None] * basis[1]
            cands /= np.linalg.norm(cands, axis=-1, keepdims=True)
            costs = np.einsum("nk,abk->abn", pts - pts.mean(axis=0), cands)
            costs = (costs ** 2).sum(axis=-1)
            a, b = np.unravel_index(np.argmin(costs), costs.shape)
            best = cands[a, b]
            span /= 40
        assert cost(fit.normal) <= cost(best) + 1e-12
        assert math.degrees(math.acos(min(1.0, abs(fit.normal @ best)))) < 0.05

    @given(perm_seed=st.integers(0, 10_000))
    def test_permutation_invariant(self, perm_seed):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(12, 3)) * [1.0, 1.0, 0.05]
        a = calibrate_laser_plane(pts)
        b = calibrate_laser_plane(pts[np.random.default_rng(perm_seed).permutation(12)])
        assert abs(abs(a.normal @ b.normal) - 1.0) < 1e-12
        assert abs(abs(a.offset) - abs(b.offset)) < 1e-12

    def test_offset_invariant(self):
        plane = LaserPlane([1.0, 2.0, 3.0], [0.0, 0.0, 2.0])
        assert np.linalg.norm(plane.normal) == pytest.approx(1.0, abs=1e-12)
        assert plane.offset == pytest.approx(3.0)


class TestIntersect:
    def test_axis_aligned(self):
        p = intersect_ray_plane(Ray(np.zeros(3), np.array([0.0, 0.0, 1.0])),
                                LaserPlane([0, 0, 2], [0, 0, 1]))
        np.testing.assert_allclose(p, [0, 0, 2])

    def test_parallel(self):
        with pytest.raises(ParallelRay):
            intersect_ray_plane(Ray(np.zeros(3), np.array([0.0, 1.0, 0.0])),
                                LaserPlane([1, 0, 0], [1, 0, 0]))

    def test_behind(self):
        with pytest.raises(BehindCamera):
            intersect_ray_plane(Ray(np.zeros(3), np.array([0.0, 0.0, 1.0])),
                                LaserPlane([0, 0, -2], [0, 0, 1]))

    def test_batched_status(self):
        plane = LaserPlane([0, 0, 1], [0, 0, 1])
        dirs = np.array([[0, 0, 1.0], [1, 0, 0.0], [0, 0, -1.0]])
        pts, t, status = intersect_rays(np.zeros(3), dirs, plane)
        assert list(status) == [0, 1, 2]
        assert t[0] == pytest.approx(1.0)
        assert np.isnan(pts[1:]).all()

    def test_thousand_random_cases_match_root_finding(self):
        rng = np.random.default_rng(8)
        checked = 0
        while checked < 1000:
            o = rng.uniform(-2, 2, 3)
            n = unit(rng.normal(size=3))
            plane = LaserPlane(rng.uniform(-2, 2, 3), n)
            d = unit(rng.normal(size=3))
            if abs(d @ n) < 1e-3 or (plane.offset - o @ n) / (d @ n) < 0:
                continue
            p = intersect_ray_plane(Ray(o, d), plane)
            t_ref = root_ray_plane(o, d, n, plane.offset, t_hi=1e4)
            assert np.max(np.abs(p - (o + t_ref * d))) < 1e-9
            assert abs(plane.signed_distance(p)) < 1e-9
            checked += 1

    def test_triangulation_consistency(self):
        rng = np.random.default_rng(9)
        cam = random_camera(rng, (-0.1, 0.01, 1e-4, 1e-4))
        plane = LaserPlane([0.0, 0.0, 0.0], unit([0.2, 0.5, -1.0]))
        basis = np.linalg.svd(plane.normal[None, :])[2][1:]
        Q = rng.uniform(-0.3, 0.3, (200, 2)) @ basis
        pts, status = triangulate(cam, plane, project(cam, Q))
        assert (status == 0).all()
        np.testing.assert_allclose(pts, Q, atol=1e-6)
        assert np.abs(plane.signed_distance(pts)).max() < 1e-9


class TestCalibrationFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        cam = random_camera(rng, (-0.1, 0.0, 0.0, 0.0))
        plane = LaserPlane([1, 0, 0.5], [0.5, 0, -1])
        save_calibration(tmp_path / "c.json", cam, plane)
        cam2, plane2 = load_calibration(tmp_path / "c.json")
        np.testing.assert_allclose(cam2.projection, cam.projection)
        assert cam2.distortion == cam.distortion
        np.testing.assert_allclose(plane2.normal, plane.normal)

    @pytest.mark.parametrize("mutate, field", [
        (lambda d: d["camera"].pop("H"), "camera.H"),
        (lambda d: d["camera"].__setitem__("H", [[1, 2], [3, 4]]), "camera.H"),
        (lambda d: d["camera"].__setitem__("H", [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0]]),
         "camera.H"),
        (lambda d: d["camera"].__setitem__("width", -5), "camera.width"),
        (lambda d: d["camera"].__setitem__("height", 2.5), "camera.height"),
        (lambda d: d["camera"].__setitem__("distortion", [0, 0]), "camera.distortion"),
        (lambda d: d["laser"].__setitem__("anchor", [0, "a", 0]), "laser.anchor"),
        (lambda d: d["laser"].__setitem__("normal", [0, 0, 2]), "laser.normal"),
        (lambda d: d.pop("laser"), "laser"),
    ])
    def test_validation_names_field(self, mutate, field):
        data = calibration_to_dict(NORMALIZED, LaserPlane([0, 0, 1], [0, 0, 1]))
        data = json.loads(json.dumps(data))
        mutate(data)
        with pytest.raises(CalibrationError) as info:
            calibration_from_dict(data)
        assert info.value.field == field
