"""Height-matrix storage of a scanned workpiece.

Cell ``(i, j)`` holds the depth ``x`` of the surface at

    y = y_min + S_c * i
    z = z_min - S_c * j

so ``y_min``/``z_min`` are the world coordinates of cell ``(0, 0)`` (z
decreases with ``j``).  Points are expressed in the workpiece frame, i.e.
the world frame at frame 0 of the scan, by undoing the conveyor motion.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import CameraModel, LaserPlane, triangulate

INVALID, MEASURED, INTERPOLATED = 0, 1, 2


@dataclass(frozen=True)
class ConveyorModel:
    speed: float = 1.0  # m/min
    frame_rate: float = 30.0  # Hz
    motion_axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.speed > 0 or not self.frame_rate > 0:
            raise ValueError("conveyor speed and frame rate must be positive")
        axis = np.asarray(self.motion_axis, dtype=float)
        norm = np.linalg.norm(axis)
        if axis.shape != (3,) or norm == 0:
            raise ValueError("motion_axis must be a non-zero 3-vector")
        object.__setattr__(self, "motion_axis", tuple(float(c) for c in axis / norm))

    @property
    def step_per_frame(self):
        """Conveyor advance between consecutive frames, in metres."""
        return self.speed / (60.0 * self.frame_rate)

    def offset(self, frame_index):
        return frame_index * self.step_per_frame * np.asarray(self.motion_axis)


@dataclass(eq=False)
class HeightMatrix:
    depth: np.ndarray
    state: np.ndarray
    cell_size: float
    y_min: float
    z_min: float

    @classmethod
    def empty(cls, rows, cols, cell_size=0.001, y_min=0.0, z_min=0.0):
        return cls(np.zeros((rows, cols)), np.zeros((rows, cols), dtype=np.uint8),
                   float(cell_size), float(y_min), float(z_min))

    @classmethod
    def for_scan(cls, camera: CameraModel, plane: LaserPlane, conveyor: ConveyorModel,
                 n_frames, cell_size=0.001, depth_range=(-0.15, 0.15), stride=8):
        """Size a matrix for a whole scan.

        The lateral extent is the part of the laser plane the camera sees
        with depth inside ``depth_range``; the motion extent adds the
        conveyor travel over ``n_frames``.
        """
        us = np.arange(0, camera.width, stride, dtype=float)
        vs = np.arange(0, camera.height, stride, dtype=float)
        uu, vv = np.meshgrid(np.append(us, camera.width - 1), np.append(vs, camera.height - 1))
        pts, status = triangulate(camera, plane, np.stack([uu.ravel(), vv.ravel()], -1))
        pts = pts[status == 0]
        lo, hi = depth_range
        pts = pts[(pts[:, 0] >= lo) & (pts[:, 0] <= hi)]
        if pts.size == 0:
            raise ValueError("laser plane is not visible within the depth range")
        travel = np.asarray(conveyor.offset(max(n_frames - 1, 0)))
        swept = np.vstack([pts, pts - travel])
        y0, y1 = swept[:, 1].min(), swept[:, 1].max()
        z0, z1 = swept[:, 2].min(), swept[:, 2].max()
        pad = 2 * cell_size
        rows = int(np.ceil((y1 - y0 + 2 * pad) / cell_size)) + 1
        cols = int(np.ceil((z1 - z0 + 2 * pad) / cell_size)) + 1
        return cls.empty(rows, cols, cell_size, y0 - pad, z1 + pad)

    @property
    def rows(self):
        return self.depth.shape[0]

    @property
    def cols(self):
        return self.depth.shape[1]

    @property
    def valid(self):
        return self.state != INVALID

    def copy(self):
        return HeightMatrix(self.depth.copy(), self.state.copy(), self.cell_size,
                            self.y_min, self.z_min)

    def cell_of(self, points):
        """Nearest cell indices ``(i, j)`` for world points (may be out of range)."""
        P = np.asarray(points, dtype=float)
        i = np.rint((P[..., 1] - self.y_min) / self.cell_size).astype(np.intp)
        j = np.rint((self.z_min - P[..., 2]) / self.cell_size).astype(np.intp)
        return i, j

    def world_of(self, i, j):
        """World coordinates of cells, depth included."""
        i = np.asarray(i)
        j = np.asarray(j)
        return np.stack([self.depth[i, j], self.y_min + self.cell_size * i,
                         self.z_min - self.cell_size * j], axis=-1)


def accumulate(matrix: HeightMatrix, points, frame_index, conveyor: ConveyorModel,
               tally: Counter | None = None) -> HeightMatrix:
    """Add one frame's laser points to the matrix (in place; returns it).

    Points are moved into the workpiece frame, quantised to cells, and
    stored keeping the depth nearest the camera (largest ``x``) on
    collisions.  Points outside the matrix are dropped and counted under
    ``"out_of_bounds"``.
    """
    if frame_index < 0:
        raise ValueError("frame_index must be >= 0")
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if P.shape[0] == 0:
        return matrix
    P = P - conveyor.offset(frame_index)
    i, j = matrix.cell_of(P)
    inside = (i >= 0) & (i < matrix.rows) & (j >= 0) & (j < matrix.cols)
    if tally is not None:
        tally["out_of_bounds"] += int(np.count_nonzero(~inside))
        tally["accumulated"] += int(np.count_nonzero(inside))
    kernels.accumulate_max(matrix.depth, matrix.state, i[inside], j[inside],
                           np.ascontiguousarray(P[inside, 0]))
    return matrix


def to_point_cloud(matrix: HeightMatrix) -> np.ndarray:
    i, j = np.nonzero(matrix.valid)
    if i.size == 0:
        return np.empty((0, 3))
    return matrix.world_of(i, j)


def fill_holes(matrix: HeightMatrix, max_gap, axis="rows") -> HeightMatrix:
    """Bridge short invalid runs by linear interpolation.

    Runs of at most ``max_gap`` invalid cells with a valid cell on both
    sides are filled and flagged ``INTERPOLATED``.  ``axis`` is ``"rows"``
    (along ``j``), ``"cols"`` (along ``i``) or ``"both"`` (rows, then
    columns).  Returns a new matrix.
    """
    if max_gap < 0:
        raise ValueError("max_gap must be >= 0")
    if axis not in ("rows", "cols", "both"):
        raise ValueError("axis must be 'rows', 'cols' or 'both'")
    out = matrix.copy()
    if max_gap == 0:
        return out
    if axis in ("rows", "both"):
        kernels.fill_rows(out.depth, out.state, int(max_gap), INTERPOLATED)
    if axis in ("cols", "both"):
        dT = np.ascontiguousarray(out.depth.T)
        sT = np.ascontiguousarray(out.state.T)
        kernels.fill_rows(dT, sT, int(max_gap), INTERPOLATED)
        out.depth = np.ascontiguousarray(dT.T)
        out.state = np.ascontiguousarray(sT.T)
    return out


# -- persistence --------------------------------------------------------------

_SNAPSHOT_MAGIC = b"HMAT"
_SNAPSHOT_HEADER = struct.Struct("<4sIqqddd")  # magic, version, rows, cols, S_c, y_min, z_min


def save_snapshot(path, matrix: HeightMatrix):
    """Little-endian binary: header, row-major float64 depth, uint8 state."""
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_HEADER.pack(_SNAPSHOT_MAGIC, 1, matrix.rows, matrix.cols,
                                       matrix.cell_size, matrix.y_min, matrix.z_min))
        fh.write(np.ascontiguousarray(matrix.depth, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(matrix.state, dtype=np.uint8).tobytes())


def load_snapshot(path) -> HeightMatrix:
    with open(path, "rb") as fh:
        head = fh.read(_SNAPSHOT_HEADER.size)
        if len(head) != _SNAPSHOT_HEADER.size:
            raise ValueError(f"{path}: truncated height-matrix header")
        magic, version, rows, cols, cell, y_min, z_min = _SNAPSHOT_HEADER.unpack(head)
        if magic != _SNAPSHOT_MAGIC or version != 1:
            raise ValueError(f"{path}: not a height-matrix snapshot")
        n = rows * cols
        depth = np.frombuffer(fh.read(8 * n), dtype="<f8")
        state = np.frombuffer(fh.read(n), dtype=np.uint8)
    if depth.size != n or state.size != n:
        raise ValueError(f"{path}: truncated height-matrix payload")
    return HeightMatrix(depth.reshape(rows, cols).astype(float), state.reshape(rows, cols).copy(),
                        cell, y_min, z_min)


def write_ply(path, points):
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(P)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\nend_header\n")
        np.savetxt(fh, P, fmt="%.9g")


def read_ply(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        if fh.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n = None
        for line in fh:
            line = line.strip()
            if line.startswith("format") and "ascii" not in line:
                raise ValueError(f"{path}: only ASCII PLY is supported")
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            if line == "end_header":
                break
        data = np.loadtxt(fh, ndmin=2) if n else np.empty((0, 3))
    return data.reshape(-1, 3)


def write_csv(path, points):
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    np.savetxt(path, P, fmt="%.9g", delimiter=",", header="x,y,z", comments="")
