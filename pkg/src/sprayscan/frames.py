"""Camera frames -> laser profiles -> points on the laser plane."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .geometry import BEHIND, OK, PARALLEL, CameraModel, LaserPlane, triangulate

DEFAULT_THRESHOLD = 128
DEFAULT_MAX_RUN = 15
FRAME_PATTERN = "frame_{:06d}.pgm"
_FRAME_RE = re.compile(r"^frame_(\d{6})\.pgm$")


@dataclass(frozen=True, eq=False)
class Frame:
    """One 8-bit grey image, stored as a ``(height, width)`` uint8 array."""

    intensities: np.ndarray
    index: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        img = np.asarray(self.intensities)
        if img.ndim != 2:
            raise ValueError("frame intensities must be a 2-D grid")
        if img.dtype != np.uint8:
            if np.any((img < 0) | (img > 255)):
                raise ValueError("intensities must lie in 0..255")
            img = img.astype(np.uint8)
        object.__setattr__(self, "intensities", img)

    @property
    def width(self):
        return self.intensities.shape[1]

    @property
    def height(self):
        return self.intensities.shape[0]


@dataclass(frozen=True, eq=False)
class LaserProfile:
    """Per-column sub-pixel laser position.

    ``columns[k]`` is the image coordinate along the line (``u`` for the
    default per-column layout) and ``rows[k]`` the centroid across it.  In
    transposed mode the roles swap; ``pixels()`` always returns ``(u, v)``.
    """

    columns: np.ndarray
    rows: np.ndarray
    valid: np.ndarray
    threshold_used: int
    transposed: bool = False

    @property
    def n_valid(self):
        return int(np.count_nonzero(self.valid))

    def pixels(self):
        c = self.columns[self.valid].astype(float)
        r = self.rows[self.valid]
        if self.transposed:
            return np.stack([r, c], axis=-1)
        return np.stack([c, r], axis=-1)


def binarize(frame: Frame, threshold: int) -> Frame:
    """0 where intensity < threshold, 1 where intensity >= threshold."""
    out = (frame.intensities >= threshold).astype(np.uint8)
    return Frame(out, frame.index, frame.timestamp)


def extract_laser_line(frame: Frame, threshold=DEFAULT_THRESHOLD,
                       max_run_px=DEFAULT_MAX_RUN, transpose=False) -> LaserProfile:
    """Locate the laser line with one sample per column (per row if ``transpose``).

    A column is valid when it has at least one pixel >= threshold and the
    above-threshold run around its brightest pixel is no longer than
    ``max_run_px`` (longer runs are blobs or reflections, not the line).
    """
    img = frame.intensities.T if transpose else frame.intensities
    v, ok = kernels.column_centroids(img, int(threshold), int(max_run_px))
    cols = np.arange(img.shape[1])
    return LaserProfile(cols, v, ok, int(threshold), transpose)


def profile_to_points(profile: LaserProfile, camera: CameraModel, plane: LaserPlane,
                      tally: Counter | None = None) -> np.ndarray:
    """Triangulate every valid profile sample onto the laser plane.

    Samples whose ray is parallel to the plane or meets it behind the camera
    are dropped; the counts go into ``tally`` under ``"parallel"`` and
    ``"behind_camera"``.
    """
    if profile.n_valid == 0:
        return np.empty((0, 3))
    pts, status = triangulate(camera, plane, profile.pixels())
    if tally is not None:
        tally["parallel"] += int(np.count_nonzero(status == PARALLEL))
        tally["behind_camera"] += int(np.count_nonzero(status == BEHIND))
        tally["triangulated"] += int(np.count_nonzero(status == OK))
    return pts[status == OK]


# -- PGM frames and scan manifests -------------------------------------------

def write_pgm(path, image):
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _pgm_tokens(data):
    """Yield (token, end_offset) for the PGM header, skipping comments."""
    pos = 0
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < n and not data[pos:pos + 1].isspace():
                pos += 1
            yield data[start:pos], pos


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = _pgm_tokens(data)
    try:
        magic, _ = next(tokens)
        w, _ = next(tokens)
        h, _ = next(tokens)
        maxval, end = next(tokens)
    except StopIteration:
        raise ValueError(f"{path}: truncated PGM header") from None
    if magic != b"P5":
        raise ValueError(f"{path}: only binary PGM (P5) is supported")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    body = data[end + 1:end + 1 + w * h]
    if len(body) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def write_manifest(scan_dir, frame_rate_hz, n_frames, **extra):
    names = [FRAME_PATTERN.format(i) for i in range(n_frames)]
    manifest = {"schema": 1, "frame_rate_hz": float(frame_rate_hz), "frame_count": n_frames,
                "frames": names}
    manifest.update(extra)
    Path(scan_dir, "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest


def read_manifest(scan_dir):
    path = Path(scan_dir, "manifest.json")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    rate = manifest.get("frame_rate_hz")
    if not isinstance(rate, (int, float)) or rate <= 0:
        raise ValueError(f"{path}: frame_rate_hz must be a positive number")
    frames = manifest.get("frames")
    if frames is None:
        frames = sorted(p.name for p in Path(scan_dir).iterdir() if _FRAME_RE.match(p.name))
        manifest["frames"] = frames
    indices = []
    for name in frames:
        m = _FRAME_RE.match(name)
        if not m:
            raise ValueError(f"{path}: bad frame name {name!r}")
        indices.append(int(m.group(1)))
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise ValueError(f"{path}: frame indices must be strictly increasing")
    manifest["indices"] = indices
    return manifest


def iter_scan_frames(scan_dir, manifest=None):
    """Yield frames of a scan directory in manifest order."""
    manifest = manifest or read_manifest(scan_dir)
    rate = manifest["frame_rate_hz"]
    for name, idx in zip(manifest["frames"], manifest["indices"]):
        yield Frame(read_pgm(Path(scan_dir, name)), idx, idx / rate)
