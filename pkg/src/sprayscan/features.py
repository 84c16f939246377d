"""Border, size, slope and profile features of a finished height matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateGeometry, EmptyMatrix, NoValidCells, TooFewPoints
from .reconstruction import MEASURED, HeightMatrix

REFERENCE_NORMAL = (1.0, 0.0, 0.0)
VERTICAL_AXIS = (0.0, 1.0, 0.0)
MAD_SCALE = 1.4826

_EIGHT = np.ones((3, 3), dtype=bool)
# Moore neighbourhood, clockwise on screen (i grows downward) starting west
_MOORE = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)]
_DIRECTION = {off: k for k, off in enumerate(_MOORE)}


@dataclass(frozen=True)
class BorderSet:
    cells: list
    component: np.ndarray  # boolean mask of the traced component

    @property
    def perimeter_len(self):
        return len(self.cells)

    def indices(self):
        arr = np.asarray(self.cells, dtype=np.intp).reshape(-1, 2)
        return arr[:, 0], arr[:, 1]


@dataclass(frozen=True, eq=False)
class PlaneFit:
    centroid: np.ndarray
    normal: np.ndarray
    rms_residual: float
    tilt: tuple  # (pitch, yaw) radians

    @property
    def tilt_deg(self):
        return tuple(float(np.degrees(a)) for a in self.tilt)

    def depth_at(self, y, z):
        """Depth ``x`` of the plane above world ``(y, z)``."""
        n, c = self.normal, self.centroid
        return c[0] - (n[1] * (np.asarray(y) - c[1]) + n[2] * (np.asarray(z) - c[2])) / n[0]


@dataclass(frozen=True)
class FeatureVector:
    var_horiz: float  # mm^2
    var_vert: float  # mm^2
    length: float  # m
    width: float  # m

    def __post_init__(self):
        if self.var_horiz < 0 or self.var_vert < 0:
            raise ValueError("variances must be non-negative")
        if not self.length >= self.width > 0:
            raise ValueError("expected length >= width > 0")

    @property
    def profile(self):
        return (self.var_horiz, self.var_vert)


def largest_component(valid):
    labels, n = ndimage.label(valid, structure=_EIGHT)
    if n == 0:
        return np.zeros_like(valid, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def trace_boundary(mask):
    """Moore-neighbour tracing of the outer boundary of one component.

    Starts at the first cell in raster order and walks clockwise; stops on
    re-entering the start cell the same way it was first left (Jacob's
    criterion), so the returned list is closed without repeating the start.
    """
    rows, cols = mask.shape
    nz = np.flatnonzero(mask.ravel())
    if nz.size == 0:
        return []
    start = divmod(int(nz[0]), cols)

    def inside(i, j):
        return 0 <= i < rows and 0 <= j < cols and mask[i, j]

    cells = [start]
    cur = start
    back = 0  # start was entered from the west, which is outside by construction
    first_move = None
    while True:
        for k in range(1, 9):
            d = (back + k) % 8
            ni, nj = cur[0] + _MOORE[d][0], cur[1] + _MOORE[d][1]
            if inside(ni, nj):
                break
        else:
            return cells  # isolated single cell
        move = (cur, d)
        if first_move is None:
            first_move = move
        elif move == first_move:
            cells.pop()  # the start cell was appended again on the way in
            return cells
        # the last background cell examined, seen from the new cell
        prev = _MOORE[(d - 1) % 8]
        back = _DIRECTION[(prev[0] - _MOORE[d][0], prev[1] - _MOORE[d][1])]
        cur = (ni, nj)
        cells.append(cur)


def extract_border(matrix: HeightMatrix) -> BorderSet:
    """Boundary of the largest 8-connected valid region.

    Smaller regions (support bars, stray reflections) are ignored.
    """
    valid = matrix.valid
    if not valid.any():
        raise EmptyMatrix("height matrix has no valid cells")
    comp = largest_component(valid)
    return BorderSet(trace_boundary(comp), comp)


def remove_outliers(points, multiplier=3.0, depth_axis=0):
    """Drop points whose depth is more than ``multiplier`` scaled MADs from
    the median depth.  Returns ``(kept_points, kept_fraction)``."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if P.shape[0] < 10:
        raise TooFewPoints("outlier removal needs at least 10 points")
    depth = P[:, depth_axis]
    med = np.median(depth)
    mad = MAD_SCALE * np.median(np.abs(depth - med))
    keep = np.abs(depth - med) <= multiplier * mad
    return P[keep], float(keep.mean())


def tilt_angles(normal, reference=REFERENCE_NORMAL, vertical=VERTICAL_AXIS):
    """``(pitch, yaw)`` of a plane normal relative to the ideal vertical pose.

    Pitch leans the normal toward the vertical axis (rotation about the
    horizontal axis), yaw toward the horizontal axis ``reference x vertical``.
    """
    r = np.asarray(reference, dtype=float)
    up = np.asarray(vertical, dtype=float)
    side = np.cross(r, up)
    n = np.asarray(normal, dtype=float)
    fwd = n @ r
    return (float(np.arctan2(n @ up, fwd)), float(np.arctan2(n @ side, fwd)))


def fit_plane_svd(points, reference=REFERENCE_NORMAL, vertical=VERTICAL_AXIS) -> PlaneFit:
    """Total-least-squares plane through ``points`` via SVD.

    The normal is oriented to agree with ``reference``; residual RMS is the
    smallest singular value over sqrt(n).
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if P.shape[0] < 3:
        raise DegenerateGeometry("plane fit needs at least 3 points")
    centroid = P.mean(axis=0)
    _, s, vt = np.linalg.svd(P - centroid, full_matrices=False)
    if s[0] == 0 or s[1] <= 1e-12 * s[0]:
        raise DegenerateGeometry("points are collinear")
    normal = vt[2]
    if normal @ np.asarray(reference, dtype=float) < 0:
        normal = -normal
    rms = float(s[2] / np.sqrt(P.shape[0]))
    return PlaneFit(centroid, normal, rms, tilt_angles(normal, reference, vertical))


def plane_samples(matrix: HeightMatrix, region=None, max_points=1000):
    """Up to ``max_points`` measured cells of ``region`` as world points,
    taken at a uniform stride in raster order."""
    mask = matrix.state == MEASURED
    if region is not None:
        mask &= region
    i, j = np.nonzero(mask)
    if i.size > max_points:
        pick = np.linspace(0, i.size - 1, max_points).round().astype(np.intp)
        i, j = i[pick], j[pick]
    return matrix.world_of(i, j)


def slice_variance(matrix: HeightMatrix, direction, num_slices=20, plane: PlaneFit | None = None,
                   region=None, erode=2):
    """Mean over ``num_slices`` cuts of the per-cut depth variance, in mm^2.

    The region (all valid cells by default) is eroded by ``erode`` cells and
    its extent across the cuts split into ``num_slices`` equal parts; each
    part contributes the one-cell-thick cut through its centre.  Horizontal
    cuts are matrix rows, vertical cuts matrix columns.  With ``plane`` the
    depths are taken relative to it, which removes the workpiece tilt.
    Variance uses the population divisor.
    """
    if num_slices < 1:
        raise ValueError("num_slices must be >= 1")
    if direction not in ("horizontal", "vertical"):
        raise ValueError("direction must be 'horizontal' or 'vertical'")
    mask = matrix.valid if region is None else (region & matrix.valid)
    if erode > 0:
        mask = ndimage.binary_erosion(mask, structure=_EIGHT, iterations=erode)
    if not mask.any():
        raise NoValidCells("no valid interior cells")
    depth = matrix.depth
    if plane is not None:
        ii, jj = np.indices(depth.shape)
        y = matrix.y_min + matrix.cell_size * ii
        z = matrix.z_min - matrix.cell_size * jj
        depth = depth - plane.depth_at(y, z)
    if direction == "vertical":
        mask, depth = mask.T, depth.T
    lines = np.flatnonzero(mask.any(axis=1))
    lo, hi = lines[0], lines[-1] + 1
    edges = np.linspace(lo, hi, num_slices + 1)
    centres = np.unique(np.floor((edges[:-1] + edges[1:]) / 2).astype(np.intp))
    variances = []
    for c in centres:
        vals = depth[c][mask[c]]
        if vals.size:
            variances.append(vals.var())
    if not variances:
        raise NoValidCells("every cut is empty")
    return float(np.mean(variances) * 1e6)


def estimate_dimensions(border: BorderSet, matrix: HeightMatrix, fit: PlaneFit | None = None):
    """``(length, width)`` in metres from the border's bounding box.

    Extents count whole cells.  With ``fit``, the vertical extent is divided
    by cos(pitch) and the horizontal one by cos(yaw) so a tilted plate is
    measured in its own plane rather than in projection.
    """
    if not border.cells:
        raise EmptyMatrix("empty border")
    i, j = border.indices()
    ext_y = (i.max() - i.min() + 1) * matrix.cell_size
    ext_z = (j.max() - j.min() + 1) * matrix.cell_size
    if fit is not None:
        pitch, yaw = fit.tilt
        ext_y /= np.cos(pitch)
        ext_z /= np.cos(yaw)
    return (float(max(ext_y, ext_z)), float(min(ext_y, ext_z)))


@dataclass(frozen=True, eq=False)
class WorkpieceFeatures:
    """Everything measured on one scan."""

    border: BorderSet
    plane: PlaneFit
    features: FeatureVector
    kept_fraction: float

    def to_report(self):
        f = self.features
        return {
            "schema": 1,
            "var_horiz_mm2": f.var_horiz,
            "var_vert_mm2": f.var_vert,
            "length_m": f.length,
            "width_m": f.width,
            "tilt_deg": list(self.plane.tilt_deg),
            "rms_residual_m": self.plane.rms_residual,
            "border_cells": self.border.perimeter_len,
        }


def extract_features(matrix: HeightMatrix, num_slices=20, mad_multiplier=3.0,
                     reference=REFERENCE_NORMAL, vertical=VERTICAL_AXIS, max_plane_points=1000):
    """Border, plane fit, slice variances and dimensions in one pass."""
    border = extract_border(matrix)
    samples = plane_samples(matrix, border.component, max_plane_points)
    kept, frac = remove_outliers(samples, mad_multiplier)
    plane = fit_plane_svd(kept, reference, vertical)
    h = slice_variance(matrix, "horizontal", num_slices, plane, border.component)
    v = slice_variance(matrix, "vertical", num_slices, plane, border.component)
    length, width = estimate_dimensions(border, matrix, plane)
    return WorkpieceFeatures(border, plane, FeatureVector(h, v, length, width), frac)
