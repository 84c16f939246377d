"""Time the compiled and pure-Python kernels on scanner-sized inputs.

Usage:
    python benchmarks/bench_kernels.py [--repeat 7] [--json results.json]

Every kernel runs on the same inputs for each backend; the table shows the
median wall time and the speed-up of the compiled backend.  A final row
times a whole simulated scan (render + reconstruct) per backend.
"""

import argparse
import json
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from sprayscan.kernels import available_backends


def median_time(fn, repeat):
    fn()  # warm up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def make_cases(rng):
    """name -> (callable factory taking a kernel module)."""
    h, w = 768, 1024
    img = np.zeros((h, w), dtype=np.uint8)
    rows = (380 + 20 * np.sin(np.arange(w) / 50)).astype(int)
    for dv, val in ((-1, 150), (0, 250), (1, 150)):
        img[rows + dv, np.arange(w)] = val
    img |= rng.integers(0, 8, img.shape, dtype=np.uint8)

    n_pts = 2000
    u = rng.uniform(0, w, n_pts)
    v = 380 + rng.uniform(-20, 20, n_pts)

    n_rays = 3000
    q0 = np.column_stack([np.full(n_rays, 1.0), rng.uniform(-0.3, 0.3, n_rays),
                          rng.uniform(-0.2, 0.2, n_rays)])
    d = np.column_stack([-np.ones(n_rays), rng.normal(0, 0.05, n_rays),
                         rng.normal(0, 0.05, n_rays)])
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t_max = np.full(n_rays, 3.0)

    grid = (600, 900)
    ii = rng.integers(0, grid[0], 20000).astype(np.intp)
    jj = rng.integers(0, grid[1], 20000).astype(np.intp)
    xs = rng.normal(0, 0.01, 20000)

    holes = rng.random(grid) < 0.3
    depth0 = rng.normal(0, 0.01, grid)
    state0 = (~holes).astype(np.uint8)

    def centroids(k):
        return lambda: k.column_centroids(img, 128, 15)

    def splat(k):
        canvas = np.zeros((h, w), dtype=np.float32)
        return lambda: k.splat_max(canvas, u, v, 250.0, 1.0, 3)

    def rays(k):
        return lambda: k.cast_rays(q0, d, np.zeros(n_rays), t_max, 0.005, 2 * np.pi / 0.08,
                                   2, 0.0, 0.4, 0.25, 1e-7, 200)

    def accumulate(k):
        depth = np.zeros(grid)
        state = np.zeros(grid, dtype=np.uint8)
        return lambda: k.accumulate_max(depth, state, ii, jj, xs)

    def fill(k):
        def run():
            k.fill_rows(depth0.copy(), state0.copy(), 5, 2)
        return run

    return {
        "column_centroids 1024x768": centroids,
        "splat_max 2000 points": splat,
        "cast_rays 3000 rays": rays,
        "accumulate_max 20000 points": accumulate,
        "fill_rows 600x900": fill,
    }


SCAN_SNIPPET = """
import time
from sprayscan import simulator as sim
from sprayscan.pipeline import scan_to_matrix
rig = sim.default_rig()
truth = sim.generate_surface(sim.SurfaceSpec("horizontal_wavy", 0.3, 0.2, pixel_noise_sigma=2.0))
n = sim.frames_needed(truth, rig.conveyor)
t0 = time.perf_counter()
frames = sim.render_scan(truth, rig.camera, rig.laser, rig.conveyor, n)
scan_to_matrix(frames, rig.camera, rig.laser, rig.conveyor, n)
print(time.perf_counter() - t0)
"""


def time_scan(backend):
    """Whole-scan time in a fresh interpreter, since the backend is fixed at import."""
    env = dict(os.environ, SPRAYSCAN_PURE_PYTHON="1" if backend == "python" else "0")
    out = subprocess.run([sys.executable, "-c", SCAN_SNIPPET], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--json", help="also write results here")
    ap.add_argument("--no-scan", action="store_true", help="skip the whole-scan timing")
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the Python backend will be timed")
    cases = make_cases(np.random.default_rng(0))
    results = {}
    for name, factory in cases.items():
        results[name] = {b: median_time(factory(mod), args.repeat) for b, mod in backends.items()}
    if not args.no_scan:
        results["full scan 0.3x0.2 m"] = {b: time_scan(b) for b in backends}

    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speed-up':>9s}")
    for name, r in results.items():
        py = r["python"] * 1e3
        cy = r.get("cython")
        if cy is None:
            print(f"{name:32s} {py:10.2f} {'-':>10s} {'-':>9s}")
        else:
            print(f"{name:32s} {py:10.2f} {cy * 1e3:10.2f} {r['python'] / cy:8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
