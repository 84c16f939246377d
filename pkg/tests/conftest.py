"""Shared fixtures: rigs, random cameras, the simulated acceptance suite."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sprayscan import simulator as sim
from sprayscan.classifier import default_catalog
from sprayscan.geometry import CameraModel
from sprayscan.pipeline import PipelineConfig, analyze_matrix, scan_to_matrix

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[n] = line
        print(line)
        return ok

    return record


def random_camera(rng, distortion=(0.0, 0.0, 0.0, 0.0), width=640, height=480):
    """A plausible calibrated camera looking roughly at the origin."""
    f = rng.uniform(300, 900)
    K = np.array([[f, rng.uniform(-1, 1), width / 2 + rng.uniform(-20, 20)],
                  [0.0, f * rng.uniform(0.95, 1.05), height / 2 + rng.uniform(-20, 20)],
                  [0.0, 0.0, 1.0]])
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    t = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(1.0, 3.0)])
    return CameraModel.from_intrinsics(K, q, t, width, height, distortion)


@pytest.fixture(scope="session")
def rig():
    return sim.default_rig()


@pytest.fixture(scope="session")
def small_rig():
    return sim.default_rig(320, 240)


def run_scenario(truth, rig, config=PipelineConfig()):
    """Render and reconstruct one scenario in memory."""
    n = sim.frames_needed(truth, rig.conveyor)
    frames = sim.render_scan(truth, rig.camera, rig.laser, rig.conveyor, n)
    scan = scan_to_matrix(frames, rig.camera, rig.laser, rig.conveyor, n, config)
    return scan, analyze_matrix(scan.filled, config)


SUITE_TILTS = (0.0, 5.0)
SUITE_SEEDS = (11, 12, 13)


@pytest.fixture(scope="session")
def suite_results(rig):
    """Feature records for the full simulated suite.

    Noisy: 3 classes x 6 sizes x tilts {0, 5} x 3 seeds (pixel sigma 2,
    depth sigma 0.5 mm).  Noise-free: the same without noise, one seed.
    """
    catalog = default_catalog()
    noisy = sim.scenario_suite(catalog, SUITE_TILTS, SUITE_SEEDS)
    clean = sim.scenario_suite(catalog, SUITE_TILTS, [0], pixel_noise_sigma=0.0,
                               depth_noise_sigma=0.0)
    out = {"noisy": [], "clean": []}
    for key, suite in (("noisy", noisy), ("clean", clean)):
        for sc in suite:
            _, wf = run_scenario(sc.truth, rig)
            out[key].append({"name": sc.name, "truth": sc.truth, "features": wf.features,
                             "tilt": wf.plane.tilt, "kept": wf.kept_fraction})
    return out


def rel_errors(records):
    errs = []
    for r in records:
        length, width = r["truth"].dims
        errs.append(abs(r["features"].length - length) / length)
        errs.append(abs(r["features"].width - width) / width)
    return np.array(errs)


def deg(rad):
    return math.degrees(rad)
