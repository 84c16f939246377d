"""Synthetic plates, rendering fidelity, occlusion and scenario suites."""

import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sprayscan import simulator as sim
from sprayscan.classifier import CLASSES, default_catalog
from sprayscan.errors import NeverVisible
from sprayscan.features import slice_variance
from sprayscan.frames import extract_laser_line, iter_scan_frames, profile_to_points
from sprayscan.reconstruction import MEASURED, HeightMatrix


def segment_clear(truth, start, end, offset, n=4000, slack=1e-5):
    """Dense samples of the open segment start->end all lie in front of the
    plate surface (or outside its outline)."""
    t = np.linspace(0.0, 1.0, n, endpoint=False)[1:, None]
    P = start + t * (end - start)
    q = truth.to_plate(P, offset)
    s = truth.spec
    inside = (np.abs(q[:, 1]) <= s.length / 2) & (np.abs(q[:, 2]) <= s.width / 2)
    h = q[:, 0] - truth.depth(q[:, 1], q[:, 2])
    # ignore the last stretch, where the segment meets its own end point
    near_end = np.linalg.norm(P - end, axis=1) < 5e-4
    return bool(np.all((h > -slack) | ~inside | near_end))


class TestSurface:
    def test_smooth_is_flat(self):
        truth = sim.generate_surface(sim.SurfaceSpec("smooth", 0.5, 0.3))
        a, b = np.meshgrid(np.linspace(-0.25, 0.25, 50), np.linspace(-0.15, 0.15, 30))
        assert not truth.depth(a, b).any()

    @pytest.mark.parametrize("cls,axis", [("horizontal_wavy", 2), ("vertical_wavy", 1)])
    def test_wave_range(self, cls, axis):
        truth = sim.generate_surface(sim.SurfaceSpec(cls, 0.8, 0.4))
        s = np.linspace(-0.2, 0.2, 8001)
        other = np.zeros_like(s)
        d = truth.depth(*((other, s) if axis == 2 else (s, other)))
        assert d.max() == pytest.approx(0.005, abs=1e-9)
        assert d.min() == pytest.approx(-0.005, abs=1e-9)
        # the other axis does not change the height
        d2 = truth.depth(*((s, other) if axis == 2 else (other, s)))
        assert not d2.any()

    def test_slice_variance_of_sinusoid(self):
        """Sampling the analytic surface on the cell grid gives A^2/2."""
        truth = sim.generate_surface(sim.SurfaceSpec("horizontal_wavy", 0.1, 0.324))
        # 0.324 m of width; erosion by 2 cells leaves 320 cells = 4 periods
        rows, cols = 100, 325
        m = HeightMatrix.empty(rows, cols, 0.001, -0.0495, 0.162)
        i, j = np.indices((rows, cols))
        b = m.z_min - 0.001 * j
        m.depth[:] = truth.depth(np.zeros_like(b), b)
        m.state[:] = MEASURED
        assert slice_variance(m, "horizontal") == pytest.approx(12.5, rel=0.01)
        assert slice_variance(m, "vertical") == pytest.approx(0.0, abs=1e-9)

    def test_tilt(self):
        spec = sim.SurfaceSpec("smooth", 0.5, 0.3, tilt=(math.radians(5), math.radians(-2)))
        truth = sim.generate_surface(spec)
        np.testing.assert_allclose(np.degrees(truth.tilt[0]), 5.0, atol=1e-12)
        R = truth.rotation
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)

    def test_starts_upstream(self, rig):
        truth = sim.generate_surface(sim.SurfaceSpec("vertical_wavy", 0.6, 0.4))
        side = rig.laser.signed_distance(truth.corners())
        assert side.max() < 0 or side.min() > 0
        n = sim.frames_needed(truth, rig.conveyor)
        side_end = rig.laser.signed_distance(truth.corners(rig.conveyor.offset(n - 1)))
        assert np.sign(side_end[0]) != np.sign(side[0])

    @pytest.mark.parametrize("kw", [dict(cls="wobbly"), dict(length=0), dict(wave_period=0),
                                    dict(seed=-1), dict(pixel_noise_sigma=-1)])
    def test_spec_validation(self, kw):
        base = dict(cls="smooth", length=0.5, width=0.3)
        with pytest.raises(ValueError):
            sim.SurfaceSpec(**{**base, **kw})


class TestRender:
    def test_dark_until_plate_arrives(self, small_rig):
        truth = sim.generate_surface(sim.SurfaceSpec("smooth", 0.3, 0.2))
        assert not sim.render_frame(truth, small_rig, 0).intensities.any()
        mid = sim.frames_needed(truth, small_rig.conveyor) // 2
        assert sim.render_frame(truth, small_rig, mid).intensities.max() > 200

    def test_never_visible(self, small_rig):
        truth = sim.generate_surface(sim.SurfaceSpec("smooth", 0.3, 0.2))
        away = dataclasses.replace(truth, centre=truth.centre + [0.0, 5.0, 0.0])
        with pytest.raises(NeverVisible):
            sim.render_scan(away, small_rig.camera, small_rig.laser, small_rig.conveyor)

    def test_deterministic(self, small_rig):
        spec = sim.SurfaceSpec("horizontal_wavy", 0.3, 0.2, pixel_noise_sigma=2.0,
                               depth_noise_sigma=0.0005, seed=7)
        truth = sim.generate_surface(spec)
        ks = [0, 200, 350]
        a = [sim.render_frame(truth, small_rig, k).intensities for k in ks]
        renderer = sim.Renderer(sim.generate_surface(spec), small_rig)
        b = [renderer.render(k).intensities for k in ks]
        for x, y in zip(a, b):
            assert x.tobytes() == y.tobytes()
        other = sim.generate_surface(dataclasses.replace(spec, seed=8))
        assert sim.render_frame(other, small_rig, 200).intensities.tobytes() != a[1].tobytes()

    @pytest.mark.parametrize("cls", CLASSES)
    def test_geometric_fidelity(self, rig, cls):
        """Line pixels backproject onto the true surface within 0.5 mm.

        Extraction uses a low threshold so the centroid sees the whole
        Gaussian (at 128 the clipped profile biases it by up to 0.25 px),
        and columns past the plate outline (tail bloom) are left out.
        """
        spec = sim.SurfaceSpec(cls, 0.4, 0.3, tilt=(math.radians(5), 0.0))
        truth = sim.generate_surface(spec)
        renderer = sim.Renderer(truth, rig)
        n = sim.frames_needed(truth, rig.conveyor)
        worst, count = 0.0, 0
        for k in range(n // 4, 3 * n // 4, 37):
            prof = extract_laser_line(renderer.render(k), threshold=20)
            pts = profile_to_points(prof, rig.camera, rig.laser)
            off = rig.conveyor.offset(k)
            q = truth.to_plate(pts, off)
            pts = pts[(np.abs(q[:, 1]) <= spec.length / 2) & (np.abs(q[:, 2]) <= spec.width / 2)]
            if len(pts) == 0:
                continue
            err = truth.surface_error(pts, off)
            worst = max(worst, np.abs(err).max())
            count += len(pts)
        assert count > 1000
        assert worst <= 0.0005

    def test_occlusion_dense_sampling(self, small_rig):
        spec = sim.SurfaceSpec("horizontal_wavy", 0.06, 0.05, wave_amplitude=0.004,
                               wave_period=0.01)
        truth = sim.generate_surface(spec)
        renderer = sim.Renderer(truth, small_rig)
        n = sim.frames_needed(truth, small_rig.conveyor)
        anchor = small_rig.laser.anchor
        cam = small_rig.camera.center
        checked = shadowed = 0
        for k in range(0, n, 5):
            off = small_rig.conveyor.offset(k)
            pts, _ = renderer.surface_points(k)
            for p in pts[::7]:
                assert segment_clear(truth, anchor, p, off)
                assert segment_clear(truth, cam, p, off)
                checked += 1
            # independent of the renderer: where the sheet cuts the surface
            # along a = 0, some crossings must be hidden from the laser
            b = np.linspace(-spec.width / 2, spec.width / 2, 20001)
            W = truth.to_world(np.column_stack([truth.depth(0.0, b), np.zeros_like(b), b]), off)
            sd = small_rig.laser.signed_distance(W)
            for i in np.flatnonzero(np.sign(sd[:-1]) != np.sign(sd[1:])):
                f = sd[i] / (sd[i] - sd[i + 1])
                shadowed += not segment_clear(truth, anchor, W[i] + f * (W[i + 1] - W[i]), off)
        assert checked > 100
        assert shadowed > 0


class TestSuite:
    def test_count(self):
        suite = sim.scenario_suite(default_catalog(), [0, 5], [1],
                                   sizes=["model_1", "model_2"])
        assert len(suite) == 12
        assert len({s.name for s in suite}) == 12
        assert {s.truth.cls for s in suite} == set(CLASSES)

    def test_size_ids_per_class(self):
        suite = sim.scenario_suite(default_catalog(), [0], [1], sizes=["model_5"])
        assert {(s.truth.model_id, s.truth.dims) for s in suite} == {
            ("model_5", (0.56, 0.38)), ("smooth_5", (0.56, 0.38)),
            ("vertical_wavy_5", (0.56, 0.38))}

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sim.scenario_suite(default_catalog(), [], [1])

    @given(tilt=st.floats(-10, 10), seed=st.integers(0, 2**32))
    def test_specs_valid(self, tilt, seed):
        (sc,) = sim.scenario_suite(default_catalog(), [tilt], [seed], classes=["smooth"],
                                   sizes=["model_3"])
        assert sc.spec.tilt[0] == pytest.approx(math.radians(tilt))
        assert sc.spec.seed == seed

    def test_write(self, tmp_path):
        rig = sim.default_rig(160, 120)
        suite = sim.scenario_suite(default_catalog(), [0], [3], classes=["smooth"],
                                   sizes=["model_6"])
        d = sim.write_scenario(tmp_path, suite[0], rig)
        frames = list(iter_scan_frames(d))
        assert len(frames) == sim.frames_needed(suite[0].truth, rig.conveyor)
        assert (frames[0].width, frames[0].height) == (160, 120)
        truth = json.loads((d / "truth.json").read_text())
        assert truth["model_id"] == "smooth_6" and truth["schema"] == 1
        manifest = sim.write_suite_manifest(tmp_path, suite)
        assert manifest["scenarios"][0]["dir"] == d.name
        assert json.loads((tmp_path / "suite.json").read_text()) == manifest
