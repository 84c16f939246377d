"""Calibrated camera and laser-plane geometry.

All world quantities are metres.  Pixel coordinates follow the image
convention: origin at the top-left pixel centre, ``u`` to the right and
``v`` downward.  Functions accept a single point/pixel or a stack of them
(leading axes broadcast), and return arrays of matching shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import rq

from .errors import (
    BehindCamera,
    CalibrationError,
    CollinearPoints,
    DegenerateCamera,
    DegenerateProjection,
    NoConvergence,
    ParallelRay,
    TooFewPoints,
)

W_EPS = 1e-12
PARALLEL_EPS = 1e-9
UNDISTORT_TOL_PX = 1e-8
UNDISTORT_MAX_ITER = 50


def _unit(v, name="vector"):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"{name} must be a finite non-zero 3-vector")
    return v / n


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera ``P_x = H . P`` with optional Brown distortion.

    ``distortion`` holds ``(k1, k2, p1, p2)`` and is applied to normalised
    coordinates after the perspective division.
    """

    projection: np.ndarray
    width: int
    height: int
    distortion: tuple = (0.0, 0.0, 0.0, 0.0)
    # derived in __post_init__
    center: np.ndarray = field(init=False, repr=False)
    intrinsics: np.ndarray = field(init=False, repr=False)
    _m_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        H = np.array(self.projection, dtype=float)
        if H.shape != (3, 4) or not np.all(np.isfinite(H)):
            raise DegenerateCamera("projection must be a finite 3x4 matrix")
        if np.linalg.matrix_rank(H) < 3:
            raise DegenerateCamera("projection matrix has rank < 3")
        M = H[:, :3]
        det = np.linalg.det(M)
        if abs(det) < 1e-300:
            raise DegenerateCamera("camera centre is at infinity")
        # H and -H are the same camera; fix the sign so that points in
        # front of the camera have w > 0.
        if det < 0:
            H = -H
            M = H[:, :3]
        center = -np.linalg.solve(M, H[:, 3])
        if not np.all(np.isfinite(center)):
            raise DegenerateCamera("camera centre is not finite")

        K, _ = rq(M)
        signs = np.sign(np.diag(K))
        signs[signs == 0] = 1.0
        K = K * signs  # flip columns so the diagonal is positive
        K = K / K[2, 2]

        dist = tuple(float(c) for c in self.distortion)
        if len(dist) != 4 or not all(np.isfinite(dist)):
            raise ValueError("distortion must be 4 finite coefficients")

        H.setflags(write=False)
        center.setflags(write=False)
        K.setflags(write=False)
        object.__setattr__(self, "projection", H)
        object.__setattr__(self, "distortion", dist)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "_m_inv", np.linalg.inv(M))

    @property
    def has_distortion(self):
        return any(c != 0.0 for c in self.distortion)

    @classmethod
    def from_intrinsics(cls, K, R, t, width, height, distortion=(0.0, 0.0, 0.0, 0.0)):
        """Build from ``K [R | t]`` (``R``, ``t`` map world to camera)."""
        K = np.asarray(K, dtype=float)
        Rt = np.hstack([np.asarray(R, dtype=float), np.asarray(t, dtype=float).reshape(3, 1)])
        return cls(K @ Rt, int(width), int(height), tuple(distortion))

    # distortion happens in normalised coordinates
    def _to_normalized(self, uv):
        K = self.intrinsics
        y = (uv[..., 1] - K[1, 2]) / K[1, 1]
        x = (uv[..., 0] - K[0, 2] - K[0, 1] * y) / K[0, 0]
        return x, y

    def _to_pixels(self, x, y):
        K = self.intrinsics
        u = K[0, 0] * x + K[0, 1] * y + K[0, 2]
        v = K[1, 1] * y + K[1, 2]
        return np.stack([u, v], axis=-1)

    def distort(self, uv):
        """Forward Brown model: ideal pixel -> observed (distorted) pixel."""
        uv = np.asarray(uv, dtype=float)
        if not self.has_distortion:
            return uv.copy()
        x, y = self._to_normalized(uv)
        xd, yd = _brown(x, y, self.distortion)
        return self._to_pixels(xd, yd)


def _brown(x, y, coeffs):
    k1, k2, p1, p2 = coeffs
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return xd, yd


@dataclass(frozen=True, eq=False)
class Ray:
    """Half-line ``origin + t * direction`` for ``t >= 0``.

    ``direction`` may be a single unit vector or an ``(N, 3)`` stack sharing
    the origin (all pixels of one camera backproject from its centre).
    """

    origin: np.ndarray
    direction: np.ndarray

    def at(self, t):
        t = np.asarray(t, dtype=float)
        return self.origin + t[..., None] * self.direction


@dataclass(frozen=True, eq=False)
class LaserPlane:
    """Plane swept by the line laser: ``normal . P = offset``."""

    anchor: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        anchor = np.array(self.anchor, dtype=float).reshape(3)
        if not np.all(np.isfinite(anchor)):
            raise ValueError("anchor must be finite")
        normal = _unit(self.normal, "normal").reshape(3)
        anchor.setflags(write=False)
        normal.setflags(write=False)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "normal", normal)

    @property
    def offset(self):
        return float(self.normal @ self.anchor)

    def signed_distance(self, points):
        return np.asarray(points, dtype=float) @ self.normal - self.offset


def project(camera: CameraModel, point) -> np.ndarray:
    """Project world point(s) to pixel(s), distortion included."""
    P = np.asarray(point, dtype=float)
    H = camera.projection
    hom = P @ H[:, :3].T + H[:, 3]
    w = hom[..., 2]
    if np.any(np.abs(w) < W_EPS):
        raise DegenerateProjection("point lies on the camera's principal plane")
    uv = hom[..., :2] / w[..., None]
    if camera.has_distortion:
        uv = camera.distort(uv)
    return uv


def backproject(camera: CameraModel, pixel) -> Ray:
    """Ray through an (already undistorted) pixel, starting at the camera centre."""
    uv = np.asarray(pixel, dtype=float)
    hom = np.concatenate([uv, np.ones(uv.shape[:-1] + (1,))], axis=-1)
    d = hom @ camera._m_inv.T
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    return Ray(camera.center, d)


def undistort(camera: CameraModel, pixel) -> np.ndarray:
    """Invert the Brown model by fixed-point iteration.

    Raises NoConvergence when any pixel has not settled to 1e-8 px after 50
    iterations, which in practice means the coefficients are being used far
    outside the region where the model is invertible.
    """
    uv = np.asarray(pixel, dtype=float)
    if not camera.has_distortion:
        return uv.copy()
    k1, k2, p1, p2 = camera.distortion
    xd, yd = camera._to_normalized(uv)
    x, y = xd.copy(), yd.copy()
    scale = max(camera.intrinsics[0, 0], camera.intrinsics[1, 1])
    for _ in range(UNDISTORT_MAX_ITER):
        r2 = x * x + y * y
        radial = 1.0 + k1 * r2 + k2 * r2 * r2
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = (xd - dx) / radial
            y_new = (yd - dy) / radial
        step = np.maximum(np.abs(x_new - x), np.abs(y_new - y)) * scale
        x, y = x_new, y_new
        if np.all(step < UNDISTORT_TOL_PX):
            return camera._to_pixels(x, y)
    raise NoConvergence(f"undistortion did not converge in {UNDISTORT_MAX_ITER} iterations")


# ray/plane status codes for the batched intersection
OK, PARALLEL, BEHIND = 0, 1, 2


def intersect_rays(origin, directions, plane: LaserPlane):
    """Batched ray/plane intersection.

    Returns ``(points, t, status)``; rows whose status is not ``OK`` hold NaN.
    """
    origin = np.asarray(origin, dtype=float)
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    n = plane.normal
    denom = D @ n
    num = plane.offset - origin @ n if origin.ndim == 1 else plane.offset - (origin @ n)
    status = np.zeros(D.shape[0], dtype=np.int8)
    parallel = np.abs(denom) <= PARALLEL_EPS
    status[parallel] = PARALLEL
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(parallel, np.nan, num / np.where(parallel, 1.0, denom))
    status[(~parallel) & (t < 0)] = BEHIND
    bad = status != OK
    t = np.where(bad, np.nan, t)
    pts = origin + t[:, None] * D
    return pts, t, status


def intersect_ray_plane(ray: Ray, plane: LaserPlane) -> np.ndarray:
    """Closed-form intersection ``P_r0 + w_r t`` with ``w_n . P = d``."""
    single = np.asarray(ray.direction).ndim == 1
    pts, _, status = intersect_rays(ray.origin, ray.direction, plane)
    if np.any(status == PARALLEL):
        raise ParallelRay("ray is parallel to the laser plane")
    if np.any(status == BEHIND):
        raise BehindCamera("laser plane lies behind the ray origin")
    return pts[0] if single else pts


def calibrate_laser_plane(points, toward=None) -> LaserPlane:
    """Least-squares plane through >= 3 measured laser points.

    The normal is the right singular vector of the centred points with the
    smallest singular value.  If ``toward`` (typically the camera centre) is
    given, the normal is oriented to point at it; otherwise the first
    non-zero component is made positive so the result is still deterministic.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3 or P.shape[0] < 3:
        raise TooFewPoints("need at least 3 world points")
    diffs = P[:, None, :] - P[None, :, :]
    dist = np.linalg.norm(diffs, axis=-1)
    np.fill_diagonal(dist, np.inf)
    if np.any(dist == 0.0):
        raise ValueError("laser calibration points must be pairwise distinct")
    centroid = P.mean(axis=0)
    _, s, vt = np.linalg.svd(P - centroid, full_matrices=False)
    if s[1] <= 1e-9 * s[0]:
        raise CollinearPoints("laser calibration points are collinear")
    normal = vt[-1]
    if toward is not None:
        if normal @ (np.asarray(toward, dtype=float) - centroid) < 0:
            normal = -normal
    else:
        lead = normal[np.flatnonzero(np.abs(normal) > 1e-12)[0]]
        if lead < 0:
            normal = -normal
    return LaserPlane(centroid, normal)


def triangulate(camera: CameraModel, plane: LaserPlane, pixels):
    """Observed pixels -> points on the laser plane, with per-pixel status."""
    uv = undistort(camera, pixels)
    ray = backproject(camera, uv)
    pts, _, status = intersect_rays(ray.origin, ray.direction, plane)
    return pts, status


# -- calibration file -------------------------------------------------------

def _vector(obj, key, where, length):
    if key not in obj:
        raise CalibrationError(f"{where}.{key}", "missing")
    try:
        arr = np.asarray(obj[key], dtype=float)
    except (TypeError, ValueError):
        raise CalibrationError(f"{where}.{key}", "must be numeric") from None
    if arr.shape != (length,):
        raise CalibrationError(f"{where}.{key}", f"expected {length} numbers")
    if not np.all(np.isfinite(arr)):
        raise CalibrationError(f"{where}.{key}", "must be finite")
    return arr


def calibration_from_dict(data):
    """Validate a calibration mapping and build ``(CameraModel, LaserPlane)``."""
    if not isinstance(data, dict):
        raise CalibrationError("<root>", "expected a JSON object")
    cam = data.get("camera")
    if not isinstance(cam, dict):
        raise CalibrationError("camera", "missing or not an object")
    if "H" not in cam:
        raise CalibrationError("camera.H", "missing")
    try:
        H = np.asarray(cam["H"], dtype=float)
    except (TypeError, ValueError):
        raise CalibrationError("camera.H", "must be a 3x4 numeric matrix") from None
    if H.shape != (3, 4):
        raise CalibrationError("camera.H", "must be a 3x4 numeric matrix")
    if not np.all(np.isfinite(H)):
        raise CalibrationError("camera.H", "must be finite")
    for key in ("width", "height"):
        val = cam.get(key)
        if not isinstance(val, int) or isinstance(val, bool) or val <= 0:
            raise CalibrationError(f"camera.{key}", "must be a positive integer")
    dist = _vector(cam, "distortion", "camera", 4) if "distortion" in cam else np.zeros(4)
    try:
        camera = CameraModel(H, cam["width"], cam["height"], tuple(dist))
    except DegenerateCamera as exc:
        raise CalibrationError("camera.H", str(exc)) from None

    laser = data.get("laser")
    if not isinstance(laser, dict):
        raise CalibrationError("laser", "missing or not an object")
    anchor = _vector(laser, "anchor", "laser", 3)
    normal = _vector(laser, "normal", "laser", 3)
    if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
        raise CalibrationError("laser.normal", "must be a unit vector")
    return camera, LaserPlane(anchor, normal)


def calibration_to_dict(camera: CameraModel, plane: LaserPlane):
    return {
        "camera": {
            "H": camera.projection.tolist(),
            "width": camera.width,
            "height": camera.height,
            "distortion": list(camera.distortion),
        },
        "laser": {"anchor": plane.anchor.tolist(), "normal": plane.normal.tolist()},
    }


def load_calibration(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CalibrationError("<root>", f"invalid JSON ({exc})") from None
    return calibration_from_dict(data)


def save_calibration(path, camera, plane):
    Path(path).write_text(json.dumps(calibration_to_dict(camera, plane), indent=2), encoding="utf-8")
