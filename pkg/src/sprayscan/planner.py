"""Spray templates per profile class, sized and tilted to the measured plate.

Plans live in the world frame: the nominal plate surface is the plane
``x = centre[0]`` facing +x (toward the scanner), strokes run along ``y``
(vertical) or ``z`` (horizontal), and the gun sits ``standoff`` in front
of the surface pointing back along -x.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ImplausibleFit, UnknownClass
from .features import REFERENCE_NORMAL, PlaneFit

DEFAULT_SPACING = 0.10
DEFAULT_STANDOFF = 0.20
DEFAULT_SPEED = 0.5
DEFAULT_MARGIN = 0.05
DEFAULT_POSE_STEP = 0.025
DEFAULT_MAX_RMS = 0.005

STROKE_FOR_CLASS = {
    "horizontal_wavy": "vertical",
    "vertical_wavy": "horizontal",
    "smooth": "vertical",
}

# tool +z onto world -x: a -90 degree turn about y, stored (w, x, y, z)
GUN_QUATERNION = (math.cos(-math.pi / 4), 0.0, math.sin(-math.pi / 4), 0.0)


@dataclass(frozen=True)
class SprayTemplate:
    cls: str
    stroke_direction: str
    stroke_spacing: float = DEFAULT_SPACING
    standoff: float = DEFAULT_STANDOFF
    travel_speed: float = DEFAULT_SPEED
    margin: float = DEFAULT_MARGIN
    pose_step: float = DEFAULT_POSE_STEP

    def __post_init__(self):
        if self.stroke_direction not in ("vertical", "horizontal"):
            raise ValueError("stroke_direction must be 'vertical' or 'horizontal'")
        for name in ("stroke_spacing", "standoff", "travel_speed", "margin", "pose_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class SprayPlan:
    """Ordered gun poses plus the rigid transform applied to the ideal plan.

    ``quaternions`` are unit (w, x, y, z); ``frame_rotation``/``frame_translation``
    map ideal-frame points ``p`` to ``R @ p + t``.
    """

    template: SprayTemplate
    dims: tuple
    centre: np.ndarray
    positions: np.ndarray
    quaternions: np.ndarray
    speeds: np.ndarray
    n_strokes: int
    frame_rotation: np.ndarray
    frame_translation: np.ndarray

    @property
    def total_path_length(self):
        return float(np.linalg.norm(np.diff(self.positions, axis=0), axis=1).sum())

    @property
    def surface_normal(self):
        """Unit normal of the (possibly corrected) nominal surface."""
        return self.frame_rotation @ np.asarray(REFERENCE_NORMAL)

    def to_job(self, model_id=None, tilt_deg=(0.0, 0.0)):
        return {
            "schema": 1,
            "model_id": model_id,
            "class": self.template.cls,
            "stroke_direction": self.template.stroke_direction,
            "tilt_deg": [float(a) for a in tilt_deg],
            "dims_m": [float(d) for d in self.dims],
            "n_strokes": self.n_strokes,
            "total_path_length_m": self.total_path_length,
            "workpiece_frame": {"rotation": self.frame_rotation.tolist(),
                                "translation": self.frame_translation.tolist()},
            "poses": [{"p": p.tolist(), "q": q.tolist(), "v": float(v)}
                      for p, q, v in zip(self.positions, self.quaternions, self.speeds)],
        }


def select_template(cls, **params) -> SprayTemplate:
    """Base template for a profile class.

    Waves are crossed by the strokes: horizontal waves get vertical strokes
    and vice versa; smooth plates default to vertical strokes.
    """
    try:
        direction = STROKE_FOR_CLASS[cls]
    except KeyError:
        raise UnknownClass(f"no spray template for class {cls!r}") from None
    return SprayTemplate(cls, direction, **params)


def stroke_count(cross_extent, spacing, margin):
    # the epsilon keeps exact multiples (0.5 / 0.1) from rounding up
    return int(math.ceil((cross_extent + 2 * margin) / spacing - 1e-9)) + 1


def _segment(a, b, step):
    """Points from a (exclusive) to b (inclusive) no more than ``step`` apart."""
    n = max(1, int(math.ceil(np.linalg.norm(b - a) / step - 1e-9)))
    t = np.arange(1, n + 1)[:, None] / n
    return a + t * (b - a)


def instantiate(template: SprayTemplate, dims, centre=(0.0, 0.0, 0.0)) -> SprayPlan:
    """Boustrophedon raster over ``dims`` (length along y, width along z)
    plus ``margin`` on every side, centred on ``centre``.

    Strokes are spread evenly across the inflated extent, so the actual
    spacing never exceeds the template's and the path stays inside the
    inflated box.
    """
    length, width = (float(d) for d in dims)
    if not (length > 0 and width > 0):
        raise ValueError("dims must be positive")
    m = template.margin
    half_y, half_z = length / 2 + m, width / 2 + m
    if template.stroke_direction == "vertical":
        along, across, half_along, half_across = 1, 2, half_y, half_z
    else:
        along, across, half_along, half_across = 2, 1, half_z, half_y
    n = stroke_count(2 * half_across - 2 * m, template.stroke_spacing, m)
    offsets = np.linspace(-half_across, half_across, n)

    c = np.asarray(centre, dtype=float)
    base = c + np.array([template.standoff, 0.0, 0.0])
    corners = []
    for k, off in enumerate(offsets):
        ends = (-half_along, half_along) if k % 2 == 0 else (half_along, -half_along)
        for e in ends:
            p = base.copy()
            p[along] += e
            p[across] += off
            corners.append(p)
    pts = [corners[0]]
    for b in corners[1:]:
        pts.extend(_segment(pts[-1], b, template.pose_step))
    positions = np.array(pts)
    quats = np.tile(np.array(GUN_QUATERNION), (len(positions), 1))
    speeds = np.full(len(positions), template.travel_speed)
    return SprayPlan(template, (length, width), c, positions, quats, speeds, n,
                     np.eye(3), np.zeros(3))


def rotation_between(a, b) -> Rotation:
    """Smallest rotation taking direction ``a`` onto direction ``b``."""
    a = np.asarray(a, dtype=float) / np.linalg.norm(a)
    b = np.asarray(b, dtype=float) / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    angle = math.atan2(s, float(a @ b))
    if s < 1e-15:
        if angle < 1.0:
            return Rotation.identity()
        # antiparallel: any axis perpendicular to a
        perp = np.cross(a, [1.0, 0.0, 0.0] if abs(a[0]) < 0.9 else [0.0, 1.0, 0.0])
        return Rotation.from_rotvec(perp / np.linalg.norm(perp) * math.pi)
    return Rotation.from_rotvec(axis / s * angle)


def _wxyz_to_rot(q):
    q = np.asarray(q, dtype=float)
    return Rotation.from_quat(q[..., [1, 2, 3, 0]])


def _rot_to_wxyz(r):
    q = r.as_quat()
    q = q[..., [3, 0, 1, 2]]
    # keep w >= 0 so equal rotations print equally
    sign = np.where(q[..., :1] < 0, -1.0, 1.0)
    return q * sign


def apply_slope_correction(plan: SprayPlan, fit: PlaneFit, reference=REFERENCE_NORMAL,
                           max_rms=DEFAULT_MAX_RMS) -> SprayPlan:
    """Rotate the whole plan rigidly about ``fit.centroid`` by the smallest
    rotation taking ``reference`` onto ``fit.normal``."""
    if not fit.rms_residual <= max_rms:
        raise ImplausibleFit(f"plane residual {fit.rms_residual * 1e3:.2f} mm exceeds "
                             f"{max_rms * 1e3:.2f} mm")
    rot = rotation_between(reference, fit.normal)
    R = rot.as_matrix()
    c = np.asarray(fit.centroid, dtype=float)
    positions = (plan.positions - c) @ R.T + c
    quats = _rot_to_wxyz(rot * _wxyz_to_rot(plan.quaternions))
    frame_R = R @ plan.frame_rotation
    frame_t = R @ (plan.frame_translation - c) + c
    return replace(plan, positions=positions, quaternions=quats,
                   frame_rotation=frame_R, frame_translation=frame_t)


def save_job(path, plan: SprayPlan, model_id=None, tilt_deg=(0.0, 0.0)):
    Path(path).write_text(json.dumps(plan.to_job(model_id, tilt_deg), indent=2), encoding="utf-8")


def gcode_dump(plan: SprayPlan, model_id=None) -> str:
    """Plain-text listing of the poses for inspection (mm, mm/min)."""
    t = plan.template
    lines = [
        f"; class {t.cls}  model {model_id or '-'}  strokes {plan.n_strokes} ({t.stroke_direction})",
        f"; dims {plan.dims[0]:.4f} x {plan.dims[1]:.4f} m  standoff {t.standoff:.3f} m",
        "G21 ; millimetres",
        "G90 ; absolute",
    ]
    for p, q, v in zip(plan.positions * 1e3, plan.quaternions, plan.speeds):
        lines.append(f"G1 X{p[0]:.3f} Y{p[1]:.3f} Z{p[2]:.3f} "
                     f"QW{q[0]:.6f} QX{q[1]:.6f} QY{q[2]:.6f} QZ{q[3]:.6f} F{v * 6e4:.1f}")
    lines.append("M2")
    return "\n".join(lines) + "\n"
