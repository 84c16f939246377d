"""Synthetic plates and the laser-line frames a scanner would see.

A plate lives in its own frame ``(h, a, b)``: ``h`` along the nominal
normal, ``a`` along its length (vertical), ``b`` along its width
(horizontal).  The surface is ``h = A sin(2 pi s / wavelength)`` with
``s = b`` for horizontal-wavy plates and ``s = a`` for vertical-wavy ones.
The plate is tilted about its centre and hung so that at frame 0 it sits
just upstream of the laser line; the conveyor then carries it through.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .classifier import CLASSES, ModelCatalog
from .errors import NeverVisible
from .features import tilt_angles
from .frames import Frame, write_manifest, write_pgm
from .geometry import CameraModel, LaserPlane, project
from .reconstruction import ConveyorModel

DEFAULT_AMPLITUDE = 0.005
DEFAULT_PERIOD = 0.08
DEFAULT_CLEARANCE = 0.02
RAY_SPACING = 0.0002
LINE_PEAK = 250.0
LINE_SIGMA = 1.0
SPLAT_RADIUS = 3
TRACE_TOL = 1e-7
TRACE_MAX_ITER = 200
# a camera ray that stops this much short of its target was blocked
OCCLUSION_SLACK = 1e-4


@dataclass(frozen=True)
class SurfaceSpec:
    cls: str
    length: float
    width: float
    wave_amplitude: float = DEFAULT_AMPLITUDE
    wave_period: float = DEFAULT_PERIOD
    tilt: tuple = (0.0, 0.0)  # (pitch, yaw) radians
    depth_noise_sigma: float = 0.0
    pixel_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ValueError(f"unknown class {self.cls!r}")
        if not (self.length > 0 and self.width > 0):
            raise ValueError("plate dimensions must be positive")
        if self.wave_amplitude < 0 or not self.wave_period > 0:
            raise ValueError("need amplitude >= 0 and period > 0")
        if self.depth_noise_sigma < 0 or self.pixel_noise_sigma < 0:
            raise ValueError("noise levels must be non-negative")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        object.__setattr__(self, "tilt", tuple(float(t) for t in self.tilt))

    @property
    def amplitude(self):
        """Effective wave amplitude (smooth plates have none)."""
        return 0.0 if self.cls == "smooth" else float(self.wave_amplitude)

    @property
    def wave_axis(self):
        return {"smooth": 0, "vertical_wavy": 1, "horizontal_wavy": 2}[self.cls]


def tilt_rotation(pitch, yaw):
    """Plate-to-world rotation: yaw about the vertical axis, then pitch
    about the horizontal one.  The plate normal's pitch is exactly ``pitch``."""
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    r_pitch = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]])
    r_yaw = np.array([[cy, 0.0, -sy], [0.0, 1.0, 0.0], [sy, 0.0, cy]])
    return r_pitch @ r_yaw


@dataclass(frozen=True, eq=False)
class GroundTruth:
    spec: SurfaceSpec
    rotation: np.ndarray  # plate -> world
    centre: np.ndarray  # world position of the plate centre at frame 0
    model_id: str | None = None

    @property
    def cls(self):
        return self.spec.cls

    @property
    def dims(self):
        return (self.spec.length, self.spec.width)

    @property
    def normal(self):
        return self.rotation[:, 0].copy()

    @property
    def tilt(self):
        """``(pitch, yaw)`` of the nominal normal, as the feature stage reports it."""
        return tilt_angles(self.normal)

    def depth(self, a, b):
        """Surface height above the nominal plane at plate coordinates ``(a, b)``."""
        s = self.spec
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        if s.wave_axis == 0:
            return np.zeros(a.shape)
        arg = a if s.wave_axis == 1 else b
        return s.amplitude * np.sin(2 * np.pi * arg / s.wave_period)

    def to_plate(self, points, offset=(0.0, 0.0, 0.0)):
        """World points (plate displaced by ``offset``) to plate coordinates."""
        P = np.asarray(points, dtype=float) - self.centre - np.asarray(offset)
        return P @ self.rotation

    def to_world(self, hab, offset=(0.0, 0.0, 0.0)):
        return np.asarray(hab, dtype=float) @ self.rotation.T + self.centre + np.asarray(offset)

    def surface_error(self, points, offset=(0.0, 0.0, 0.0)):
        """Height of world points above the true surface (along the plate normal)."""
        q = self.to_plate(points, offset)
        return q[..., 0] - self.depth(q[..., 1], q[..., 2])

    def corners(self, offset=(0.0, 0.0, 0.0)):
        """The 8 corners of the plate's bounding slab in world coordinates."""
        s = self.spec
        A = s.amplitude
        c = np.array([[h, a, b] for h in (-A, A) for a in (-s.length / 2, s.length / 2)
                      for b in (-s.width / 2, s.width / 2)])
        return self.to_world(c, offset)

    def to_dict(self):
        spec = asdict(self.spec)
        spec["tilt"] = list(spec["tilt"])
        return {
            "schema": 1,
            "class": self.cls,
            "model_id": self.model_id,
            "dims_m": list(self.dims),
            "tilt_rad": list(self.tilt),
            "tilt_deg": [math.degrees(t) for t in self.tilt],
            "centre_m": self.centre.tolist(),
            "rotation": self.rotation.tolist(),
            "spec": spec,
        }


def generate_surface(spec: SurfaceSpec, clearance=DEFAULT_CLEARANCE, model_id=None,
                     motion_axis=(0.0, 0.0, 1.0)) -> GroundTruth:
    """Place the plate so that at frame 0 it lies ``clearance`` upstream of
    the laser line (which crosses the depth-0 plane at ``z = 0``)."""
    R = tilt_rotation(*spec.tilt)
    # half extent of the tilted plate along the motion axis
    axis = np.asarray(motion_axis, dtype=float)
    half = 0.5 * (abs(R[:, 1] @ axis) * spec.length + abs(R[:, 2] @ axis) * spec.width) \
        + abs(R[:, 0] @ axis) * spec.amplitude
    centre = -(half + clearance) * axis
    return GroundTruth(spec, R, centre, model_id)


def frames_needed(truth: GroundTruth, conveyor: ConveyorModel):
    """Frames for the plate to pass completely through the line."""
    travel = 2 * float(-truth.centre @ np.asarray(conveyor.motion_axis))
    return int(math.ceil(travel / conveyor.step_per_frame)) + 1


# -- rig --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Rig:
    camera: CameraModel
    laser: LaserPlane
    conveyor: ConveyorModel = field(default_factory=ConveyorModel)


def default_rig(width=1024, height=768, fov_deg=60.0, distance=1.0, baseline=0.5,
                speed=1.0, frame_rate=30.0) -> Rig:
    """Camera ``distance`` in front of the conveyor plane looking back along
    -x, image ``u`` along +y; laser ``baseline`` to the side along z, its
    sheet passing through the line ``x = z = 0``."""
    f = (width / 2) / math.tan(math.radians(fov_deg) / 2)
    K = np.array([[f, 0.0, (width - 1) / 2], [0.0, f, (height - 1) / 2], [0.0, 0.0, 1.0]])
    R = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [-1.0, 0.0, 0.0]])
    centre = np.array([distance, 0.0, 0.0])
    camera = CameraModel.from_intrinsics(K, R, -R @ centre, width, height)
    anchor = np.array([distance, 0.0, baseline])
    normal = np.cross(anchor, [0.0, 1.0, 0.0])
    if normal @ (centre - anchor) < 0:
        normal = -normal
    laser = LaserPlane(anchor, normal)
    return Rig(camera, laser, ConveyorModel(speed, frame_rate))


# -- rendering ----------------------------------------------------------------

class Renderer:
    """Renders frames of one scan; holds the per-scan noise bank and canvas."""

    def __init__(self, truth: GroundTruth, rig: Rig):
        self.truth = truth
        self.rig = rig
        cam = rig.camera
        spec = truth.spec
        self.canvas = np.zeros((cam.height, cam.width), dtype=np.float32)
        self.bank = None
        if spec.pixel_noise_sigma > 0:
            # one block of noise per scan; frames read it at random offsets
            n = cam.height * cam.width
            rng = np.random.default_rng([spec.seed, 1])
            self.bank = (rng.standard_normal(n + (1 << 16), dtype=np.float32)
                         * np.float32(spec.pixel_noise_sigma))
            self.bank_u8 = np.clip(np.rint(self.bank), 0, 255).astype(np.uint8)
        self._fan = self._laser_fan()

    def _laser_fan(self):
        """Unit directions from the laser anchor, in its plane, hitting the
        line ``x = 0`` every ``RAY_SPACING`` over the plate's reach."""
        laser = self.rig.laser
        # direction of the sheet's trace on x = 0, and the foot of the anchor on it
        along = np.cross(laser.normal, [1.0, 0.0, 0.0])
        along /= np.linalg.norm(along)
        if along @ [0.0, 1.0, 0.0] < 0:
            along = -along
        to_foot = np.cross(along, laser.normal)
        foot_t = -laser.anchor[0] / to_foot[0]
        foot = laser.anchor + foot_t * to_foot
        s = self.truth.spec
        reach = 0.5 * math.hypot(s.length, s.width) + s.amplitude + 0.01
        y = np.arange(-reach, reach + RAY_SPACING / 2, RAY_SPACING)
        targets = foot + y[:, None] * along
        d = targets - laser.anchor
        return np.ascontiguousarray(d / np.linalg.norm(d, axis=1, keepdims=True))

    def _trace(self, origin, dirs, t_max, offset):
        """First plate hit along world rays; returns ``(t, hit)``."""
        truth = self.truth
        s = truth.spec
        R = truth.rotation
        q0 = np.ascontiguousarray(np.broadcast_to(
            (np.asarray(origin, dtype=float) - truth.centre - offset) @ R, dirs.shape))
        qd = np.ascontiguousarray(dirs @ R)
        n = dirs.shape[0]
        return kernels.cast_rays(q0, qd, np.zeros(n), np.ascontiguousarray(
            np.broadcast_to(np.asarray(t_max, dtype=float), (n,))),
            s.amplitude, 2 * np.pi / s.wave_period, s.wave_axis, 0.0,
            s.length / 2, s.width / 2, TRACE_TOL, TRACE_MAX_ITER)

    def surface_points(self, index, rng=None):
        """Laser points on the plate at frame ``index`` that the camera sees,
        before noise.  Also used by tests as the geometric oracle."""
        offset = self.rig.conveyor.offset(index)
        corners = self.truth.corners(offset)
        side = self.rig.laser.signed_distance(corners)
        if side.min() > 0 or side.max() < 0:
            return np.empty((0, 3)), np.empty((0, 3))
        laser = self.rig.laser
        t, hit = self._trace(laser.anchor, self._fan, 4.0 * np.linalg.norm(laser.anchor), offset)
        dirs = self._fan[hit]
        pts = laser.anchor + t[hit, None] * dirs
        if pts.shape[0] == 0:
            return pts, dirs
        # shadowed from the camera?
        cam_c = self.rig.camera.center
        to_pt = pts - cam_c
        dist = np.linalg.norm(to_pt, axis=1)
        t2, hit2 = self._trace(cam_c, np.ascontiguousarray(to_pt / dist[:, None]), dist, offset)
        seen = ~hit2 | (t2 >= dist - OCCLUSION_SLACK)
        return pts[seen], dirs[seen]

    def render(self, index) -> Frame:
        cam = self.rig.camera
        spec = self.truth.spec
        rng = np.random.default_rng([spec.seed, 2, index])
        pts, dirs = self.surface_points(index)
        r0 = r1 = 0
        if pts.shape[0]:
            if spec.depth_noise_sigma > 0:
                # shift along the laser ray so the point stays on the sheet
                cosang = np.abs(dirs @ self.truth.normal)
                noise = rng.normal(0.0, spec.depth_noise_sigma, pts.shape[0])
                pts = pts + dirs * (noise / np.maximum(cosang, 1e-3))[:, None]
            uv = project(cam, pts)
            inside = ((uv[:, 0] > -SPLAT_RADIUS) & (uv[:, 0] < cam.width + SPLAT_RADIUS)
                      & (uv[:, 1] > -SPLAT_RADIUS) & (uv[:, 1] < cam.height + SPLAT_RADIUS))
            uv = uv[inside]
            if uv.shape[0]:
                r0, r1 = kernels.splat_max(self.canvas, np.ascontiguousarray(uv[:, 0]),
                                           np.ascontiguousarray(uv[:, 1]), LINE_PEAK,
                                           LINE_SIGMA, SPLAT_RADIUS)
        h, w = self.canvas.shape
        if self.bank is None:
            img = np.zeros((h, w), dtype=np.uint8)
            if r1 > r0:
                img[r0:r1] = np.clip(np.rint(self.canvas[r0:r1]), 0, 255)
        else:
            start = int(rng.integers(0, self.bank.size - h * w + 1))
            img = self.bank_u8[start:start + h * w].reshape(h, w).copy()
            if r1 > r0:
                band = self.canvas[r0:r1] + self.bank[start + r0 * w:start + r1 * w].reshape(-1, w)
                img[r0:r1] = np.clip(np.rint(band), 0, 255)
        if r1 > r0:
            self.canvas[r0:r1] = 0.0
        return Frame(img, index, index / self.rig.conveyor.frame_rate)


def check_visible(truth: GroundTruth, rig: Rig, n_frames, samples=24):
    """Raise ``NeverVisible`` unless some frame puts laser light in the image."""
    renderer = Renderer.__new__(Renderer)
    renderer.truth, renderer.rig = truth, rig
    renderer._fan = renderer._laser_fan()[::25]
    cam = rig.camera
    for k in np.unique(np.linspace(0, max(n_frames - 1, 0), samples).round().astype(int)):
        pts, _ = renderer.surface_points(int(k))
        if pts.shape[0]:
            uv = project(cam, pts)
            if np.any((uv[:, 0] >= 0) & (uv[:, 0] <= cam.width - 1)
                      & (uv[:, 1] >= 0) & (uv[:, 1] <= cam.height - 1)):
                return
    raise NeverVisible("the plate never crosses the laser line inside the image")


def render_frame(truth: GroundTruth, rig: Rig, index) -> Frame:
    return Renderer(truth, rig).render(index)


def render_scan(truth: GroundTruth, camera: CameraModel, laser: LaserPlane,
                conveyor: ConveyorModel, frames=None):
    """Yield ``frames`` frames (enough for a full pass by default)."""
    rig = Rig(camera, laser, conveyor)
    if frames is None:
        frames = frames_needed(truth, conveyor)
    check_visible(truth, rig, frames)
    return _frames(Renderer(truth, rig), frames)


def _frames(renderer, n):
    for k in range(n):
        yield renderer.render(k)


# -- scenario suites --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    spec: SurfaceSpec
    truth: GroundTruth


def _size_entry(catalog: ModelCatalog, cls, size_id):
    """Catalogue entry of ``cls`` sharing the size number of ``size_id``."""
    suffix = "_" + size_id.rsplit("_", 1)[-1]
    for e in catalog.of_class(cls):
        if e.model_id == size_id or e.model_id.endswith(suffix):
            return e
    raise KeyError(f"no {cls} entry for size {size_id}")


def size_ids(catalog: ModelCatalog):
    """Size ids, taken from the horizontal-wavy entries."""
    return [e.model_id for e in catalog.of_class("horizontal_wavy")]


def scenario_suite(catalog: ModelCatalog, tilts, seeds, classes=CLASSES, sizes=None,
                   pixel_noise_sigma=2.0, depth_noise_sigma=0.0005, **spec_kw):
    """Every class x size x tilt (degrees, applied as pitch) x seed."""
    tilts, seeds, classes = list(tilts), list(seeds), list(classes)
    sizes = size_ids(catalog) if sizes is None else list(sizes)
    if not (tilts and seeds and classes and sizes):
        raise ValueError("scenario suite needs non-empty classes, sizes, tilts and seeds")
    out = []
    for cls in classes:
        for size in sizes:
            entry = _size_entry(catalog, cls, size)
            for tilt in tilts:
                for seed in seeds:
                    spec = SurfaceSpec(cls, entry.length, entry.width,
                                       tilt=(math.radians(tilt), 0.0),
                                       depth_noise_sigma=depth_noise_sigma,
                                       pixel_noise_sigma=pixel_noise_sigma, seed=int(seed),
                                       **spec_kw)
                    name = f"{cls}-{size}-tilt{tilt:g}-seed{seed}"
                    out.append(Scenario(name, spec, generate_surface(spec, model_id=entry.model_id)))
    return out


def write_scenario(out_dir, scenario: Scenario, rig: Rig):
    """Render one scenario to ``out_dir/<name>``: PGM frames, manifest, truth."""
    d = Path(out_dir, scenario.name)
    d.mkdir(parents=True, exist_ok=True)
    n = frames_needed(scenario.truth, rig.conveyor)
    for frame in render_scan(scenario.truth, rig.camera, rig.laser, rig.conveyor, n):
        write_pgm(d / f"frame_{frame.index:06d}.pgm", frame.intensities)
    write_manifest(d, rig.conveyor.frame_rate, n, scenario=scenario.name,
                   conveyor={"speed_m_per_min": rig.conveyor.speed,
                             "motion_axis": list(rig.conveyor.motion_axis)})
    (d / "truth.json").write_text(json.dumps(scenario.truth.to_dict(), indent=2), encoding="utf-8")
    return d


def write_suite_manifest(out_dir, scenarios):
    manifest = {"schema": 1, "scenarios": [
        {"name": s.name, "dir": s.name, "class": s.truth.cls, "model_id": s.truth.model_id,
         "tilt_deg": [math.degrees(t) for t in s.spec.tilt], "seed": s.spec.seed}
        for s in scenarios]}
    Path(out_dir, "suite.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest
