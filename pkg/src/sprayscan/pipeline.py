"""Scan -> height matrix -> features -> class, model and plan."""

from __future__ import annotations

import json
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .classifier import KnnClassifier, ModelCatalog, classify, match_model
from .features import REFERENCE_NORMAL, VERTICAL_AXIS, extract_features
from .frames import DEFAULT_MAX_RUN, DEFAULT_THRESHOLD, extract_laser_line, profile_to_points
from .geometry import CameraModel, LaserPlane
from .planner import apply_slope_correction, instantiate, select_template
from .reconstruction import ConveyorModel, HeightMatrix, accumulate, fill_holes


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable parameters; paths are resolved relative to the config file."""

    calibration: str | None = None
    catalog: str | None = None
    training_set: str | None = None
    threshold: int = DEFAULT_THRESHOLD
    max_run_px: int = DEFAULT_MAX_RUN
    cell_size: float = 0.001
    depth_range: tuple = (-0.15, 0.15)
    max_gap: int = 5
    fill_axis: str = "both"
    num_slices: int = 20
    mad_multiplier: float = 3.0
    max_plane_points: int = 1000
    k: int = 3
    match_tolerance: float = 0.05
    max_rms: float = 0.005
    reference_normal: tuple = REFERENCE_NORMAL
    vertical_axis: tuple = VERTICAL_AXIS
    conveyor_speed: float = 1.0  # m/min
    motion_axis: tuple = (0.0, 0.0, 1.0)
    stroke_spacing: float = 0.10
    standoff: float = 0.20
    travel_speed: float = 0.5
    margin: float = 0.05
    pose_step: float = 0.025

    def __post_init__(self):
        checks = [
            (0 < self.threshold <= 255, "threshold must be in 1..255"),
            (self.max_run_px >= 1, "max_run_px must be >= 1"),
            (self.cell_size > 0, "cell_size must be positive"),
            (self.depth_range[0] < self.depth_range[1], "depth_range must be increasing"),
            (self.max_gap >= 0, "max_gap must be >= 0"),
            (self.fill_axis in ("rows", "cols", "both"), "fill_axis must be rows, cols or both"),
            (self.num_slices >= 1, "num_slices must be >= 1"),
            (self.mad_multiplier > 0, "mad_multiplier must be positive"),
            (self.max_plane_points >= 3, "max_plane_points must be >= 3"),
            (self.k >= 1 and self.k % 2 == 1, "k must be an odd positive integer"),
            (0 < self.match_tolerance < 1, "match_tolerance must be in (0, 1)"),
            (self.max_rms > 0, "max_rms must be positive"),
            (self.conveyor_speed > 0, "conveyor_speed must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        for name in ("depth_range", "reference_normal", "vertical_axis", "motion_axis"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @classmethod
    def from_dict(cls, data, base_dir=None):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"schema"}
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data = {k: v for k, v in data.items() if k in known}
        for key in ("calibration", "catalog", "training_set"):
            if data.get(key) is not None and base_dir is not None:
                data[key] = str(Path(base_dir, data[key]))
        return cls(**data)

    @classmethod
    def load(cls, path):
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        return cls.from_dict(data, Path(path).parent)

    def to_dict(self):
        out = asdict(self)
        out["schema"] = 1
        return out

    def template_params(self):
        return dict(stroke_spacing=self.stroke_spacing, standoff=self.standoff,
                    travel_speed=self.travel_speed, margin=self.margin, pose_step=self.pose_step)


@dataclass
class ScanResult:
    matrix: HeightMatrix  # as accumulated, before hole filling
    filled: HeightMatrix
    tally: Counter
    timings: dict = field(default_factory=dict)


def scan_to_matrix(frames, camera: CameraModel, plane: LaserPlane, conveyor: ConveyorModel,
                   n_frames, config: PipelineConfig = PipelineConfig()) -> ScanResult:
    """Fold an iterable of frames into a height matrix, then fill holes."""
    tally = Counter()
    t0 = time.perf_counter()
    matrix = HeightMatrix.for_scan(camera, plane, conveyor, n_frames, config.cell_size,
                                   config.depth_range)
    lo, hi = config.depth_range
    for frame in frames:
        prof = extract_laser_line(frame, config.threshold, config.max_run_px)
        pts = profile_to_points(prof, camera, plane, tally)
        keep = (pts[:, 0] >= lo) & (pts[:, 0] <= hi)
        tally["out_of_range"] += int(np.count_nonzero(~keep))
        accumulate(matrix, pts[keep], frame.index, conveyor, tally)
    t1 = time.perf_counter()
    filled = fill_holes(matrix, config.max_gap, config.fill_axis)
    t2 = time.perf_counter()
    return ScanResult(matrix, filled, tally, {"reconstruct_ms": (t1 - t0) * 1e3,
                                              "fill_ms": (t2 - t1) * 1e3})


def analyze_matrix(matrix: HeightMatrix, config: PipelineConfig = PipelineConfig()):
    return extract_features(matrix, config.num_slices, config.mad_multiplier,
                            config.reference_normal, config.vertical_axis,
                            config.max_plane_points)


@dataclass
class Decision:
    """Classification, size match and plan for one workpiece."""

    cls: str | None = None
    confidence: float | None = None
    match: object = None
    plan: object = None
    warnings: list = field(default_factory=list)


def decide(wf, classifier: KnnClassifier, catalog: ModelCatalog,
           config: PipelineConfig = PipelineConfig()) -> Decision:
    """Classify, match the size and build the slope-corrected plan.

    Raises ``Untrained`` or ``ImplausibleFit``; a size mismatch is returned
    as an unmatched ``match`` with no plan.
    """
    out = Decision()
    out.cls, out.confidence = classify(classifier, wf.features)
    if out.confidence < 1.0:
        out.warnings.append(f"uncertain classification ({out.confidence:.2f} vote fraction)")
    f = wf.features
    out.match = match_model(catalog, out.cls, (f.length, f.width))
    if not out.match.matched:
        out.warnings.append(f"no catalogue model within tolerance (nearest {out.match.nearest}, "
                            f"error {out.match.rel_error:.3%})")
        return out
    template = select_template(out.cls, **config.template_params())
    plan = instantiate(template, (f.length, f.width), wf.plane.centroid)
    out.plan = apply_slope_correction(plan, wf.plane, config.reference_normal, config.max_rms)
    return out
