"""Command line: simulate scans, process them, train the classifier, report.

Exit codes
  0  success (processed, unanimous class, catalogue match, plan written)
  1  unexpected internal error
  2  usage error, bad config, empty or malformed scan directory
  3  calibration file missing or invalid
  4  classifier untrained or too few training samples
  5  no catalogue model within the match tolerance
  6  implausible plane fit; plan withheld
  7  uncertain classification (vote fraction < 1); plan only with --allow-uncertain
  8  nothing reconstructed (empty height matrix)
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from collections import Counter
from pathlib import Path

from . import __version__
from .classifier import (CLASSES, KnnClassifier, default_catalog, leave_one_out,
                         load_catalog, load_training_set, parse_sample, training_set_to_dict)
from .errors import (CalibrationError, EmptyMatrix, ImplausibleFit, NeverVisible, NoValidCells,
                     TooFewPoints, Untrained)
from .frames import iter_scan_frames, read_manifest
from .geometry import load_calibration, save_calibration
from .pipeline import PipelineConfig, analyze_matrix, decide, scan_to_matrix
from .planner import gcode_dump, save_job
from .reconstruction import ConveyorModel, save_snapshot, to_point_cloud, write_ply
from .simulator import default_rig, scenario_suite, size_ids, write_scenario, write_suite_manifest

log = logging.getLogger("sprayscan")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CALIBRATION = 3
EXIT_UNTRAINED = 4
EXIT_NO_MATCH = 5
EXIT_IMPLAUSIBLE = 6
EXIT_UNCERTAIN = 7
EXIT_EMPTY = 8


class UsageError(Exception):
    pass


def _csv(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def canonical_report(report):
    """Report with run-dependent fields (timings) removed, as stable text."""
    data = {k: v for k, v in report.items() if k != "timings_ms"}
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def load_config(args) -> PipelineConfig:
    if args.config is None:
        return PipelineConfig()
    try:
        return PipelineConfig.load(args.config)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}") from None
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad config {args.config}: {exc}") from None


def load_catalog_for(config):
    if config.catalog is None:
        return default_catalog(config.match_tolerance)
    try:
        return load_catalog(config.catalog)
    except (OSError, ValueError) as exc:
        raise UsageError(f"catalogue {config.catalog}: {exc}") from None


# -- simulate -------------------------------------------------------------------

def _parse_size(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected WIDTHxHEIGHT") from None
    if w < 16 or h < 16:
        raise argparse.ArgumentTypeError("image must be at least 16x16")
    return w, h


def cmd_simulate(args, config):
    catalog = load_catalog_for(config)
    classes = list(CLASSES) if args.classes == "all" else _csv(args.classes)
    bad = [c for c in classes if c not in CLASSES]
    if bad:
        raise UsageError(f"unknown classes: {', '.join(bad)}")
    known = size_ids(catalog)
    sizes = known if args.sizes == "all" else _csv(args.sizes)
    bad = [s for s in sizes if s not in known]
    if bad:
        raise UsageError(f"unknown sizes: {', '.join(bad)}")
    try:
        tilts = [float(t) for t in _csv(args.tilts)]
    except ValueError:
        raise UsageError(f"bad --tilts {args.tilts!r}") from None
    seeds = [args.seed + k for k in range(args.repeats)]
    suite = scenario_suite(catalog, tilts, seeds, classes, sizes,
                           pixel_noise_sigma=args.pixel_noise,
                           depth_noise_sigma=args.depth_noise * 1e-3)
    width, height = args.image_size
    rig = default_rig(width, height, args.fov, speed=config.conveyor_speed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_calibration(out / "calibration.json", rig.camera, rig.laser)
    if args.dry_run:
        for sc in suite:
            print(sc.name)
        return EXIT_OK
    for sc in suite:
        d = write_scenario(out, sc, rig)
        log.info("wrote %s", d)
    write_suite_manifest(out, suite)
    print(f"{len(suite)} scenarios written to {out}")
    return EXIT_OK


# -- process --------------------------------------------------------------------

def _find_calibration(args, config, scan_dir):
    if args.calibration:
        return Path(args.calibration)
    if config.calibration:
        return Path(config.calibration)
    for cand in (scan_dir / "calibration.json", scan_dir.parent / "calibration.json"):
        if cand.exists():
            return cand
    raise CalibrationError("<file>", f"no calibration.json in or next to {scan_dir}")


def _load_classifier(args, config):
    path = args.training or config.training_set
    if path is None:
        raise Untrained("no training set configured (--training or config 'training_set')")
    try:
        return load_training_set(path, config.k)
    except FileNotFoundError:
        raise UsageError(f"training set not found: {path}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def process_scan(args, config, scan_dir: Path, out_root: Path):
    """Run one scan; returns ``(exit_code, report)``."""
    scan_id = scan_dir.name
    report = {"schema": 1, "scan_id": scan_id, "status": "error", "warnings": [],
              "timings_ms": {}}
    timings = report["timings_ms"]

    def finish(code, status):
        report["status"] = status
        report["exit_code"] = code
        return code, report

    if not scan_dir.is_dir():
        raise UsageError(f"scan directory not found: {scan_dir}")
    try:
        manifest = read_manifest(scan_dir)
    except FileNotFoundError:
        raise UsageError(f"{scan_dir}: no manifest.json (empty scan directory?)") from None
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(str(exc)) from None
    if not manifest["frames"]:
        raise UsageError(f"{scan_dir}: scan has no frames")
    camera, plane = load_calibration(_find_calibration(args, config, scan_dir))

    conv = manifest.get("conveyor", {})
    conveyor = ConveyorModel(float(conv.get("speed_m_per_min", config.conveyor_speed)),
                             float(manifest["frame_rate_hz"]),
                             tuple(conv.get("motion_axis", config.motion_axis)))
    n_frames = manifest["indices"][-1] + 1
    t0 = time.perf_counter()
    try:
        scan = scan_to_matrix(iter_scan_frames(scan_dir, manifest), camera, plane, conveyor,
                              n_frames, config)
    except ValueError as exc:
        raise UsageError(f"{scan_dir}: {exc}") from None
    timings["scan_ms"] = (time.perf_counter() - t0) * 1e3
    timings.update(scan.timings)
    report["counts"] = dict(sorted(scan.tally.items()))
    report["frames"] = len(manifest["frames"])

    out = out_root / scan_id
    out.mkdir(parents=True, exist_ok=True)
    cloud = to_point_cloud(scan.filled)
    write_ply(out / "cloud.ply", cloud)
    save_snapshot(out / "matrix.hmat", scan.filled)
    report["artifacts"] = {"cloud": "cloud.ply", "matrix": "matrix.hmat"}
    report["valid_fraction"] = float(scan.filled.valid.mean())

    t0 = time.perf_counter()
    try:
        wf = analyze_matrix(scan.filled, config)
    except (EmptyMatrix, NoValidCells, TooFewPoints) as exc:
        report["warnings"].append(str(exc))
        return finish(EXIT_EMPTY, "empty")
    timings["features_ms"] = (time.perf_counter() - t0) * 1e3
    feats = wf.to_report()
    feats["scan_id"] = scan_id
    _write_json(out / "features.json", feats)
    report["artifacts"]["features"] = "features.json"
    report["features"] = {k: v for k, v in feats.items() if k not in ("schema", "scan_id")}
    f = wf.features
    report["dims_m"] = [f.length, f.width]
    report["tilt_deg"] = list(wf.plane.tilt_deg)

    t0 = time.perf_counter()
    try:
        classifier = _load_classifier(args, config)
        decision = decide(wf, classifier, load_catalog_for(config), config)
    except Untrained as exc:
        report["warnings"].append(str(exc))
        return finish(EXIT_UNTRAINED, "untrained")
    except ImplausibleFit as exc:
        report["warnings"].append(str(exc))
        return finish(EXIT_IMPLAUSIBLE, "implausible_fit")
    timings["decide_ms"] = (time.perf_counter() - t0) * 1e3
    report["class"] = decision.cls
    report["confidence"] = decision.confidence
    report["warnings"].extend(decision.warnings)
    report["model_id"] = decision.match.model_id
    report["nearest_model"] = decision.match.nearest
    report["size_error"] = decision.match.rel_error
    if not decision.match.matched:
        return finish(EXIT_NO_MATCH, "no_match")
    uncertain = decision.confidence < 1.0
    if args.dry_run:
        return finish(EXIT_UNCERTAIN if uncertain else EXIT_OK, "dry_run")
    if uncertain and not args.allow_uncertain:
        return finish(EXIT_UNCERTAIN, "uncertain")
    plan = decision.plan
    save_job(out / "plan.json", plan, decision.match.model_id, wf.plane.tilt_deg)
    (out / "plan.gcode").write_text(gcode_dump(plan, decision.match.model_id), encoding="utf-8")
    report["artifacts"]["plan"] = "plan.json"
    report["artifacts"]["plan_text"] = "plan.gcode"
    report["plan"] = {"poses": len(plan.positions), "strokes": plan.n_strokes,
                      "path_length_m": plan.total_path_length}
    return finish(EXIT_OK, "uncertain_dispatched" if uncertain else "ok")


def cmd_process(args, config):
    out_root = Path(args.output)
    code = EXIT_OK
    for d in args.scan_dirs:
        scan_dir = Path(d)
        rc, report = process_scan(args, config, scan_dir, out_root)
        out = out_root / scan_dir.name
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "report.json", report)
        for w in report.get("warnings", []):
            log.warning("%s: %s", scan_dir.name, w)
        print(f"{scan_dir.name}: {report['status']} class={report.get('class')} "
              f"model={report.get('model_id')} exit={rc}")
        code = code or rc
    return code


# -- train ------------------------------------------------------------------------

def _samples_from_file(path, labels_from_truth):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, list) or (isinstance(data, dict) and "samples" in data):
        records = data if isinstance(data, list) else data["samples"]
        if not isinstance(records, list):
            raise ValueError(f"{path}: 'samples' must be a list")
        return [parse_sample(r, f"{path}[{n}]") for n, r in enumerate(records)]
    if not isinstance(data, dict) or "var_horiz_mm2" not in data:
        raise ValueError(f"{path}: not a training list or a features file")
    label = data.get("label")
    if labels_from_truth:
        truth = Path(labels_from_truth, data.get("scan_id", ""), "truth.json")
        if not truth.exists():
            raise ValueError(f"{path}: no ground truth at {truth}")
        label = json.loads(truth.read_text(encoding="utf-8"))["class"]
    record = {"features": [data["var_horiz_mm2"], data["var_vert_mm2"]], "label": label}
    return [parse_sample(record, str(path))]


def cmd_train(args, config):
    samples = []
    for p in args.files:
        try:
            samples.extend(_samples_from_file(p, args.labels_from_truth))
        except FileNotFoundError:
            raise UsageError(f"file not found: {p}") from None
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            raise UsageError(f"{exc}") from None
    if len(samples) < config.k:
        print(f"error: {len(samples)} samples, need at least k={config.k}", file=sys.stderr)
        return EXIT_UNTRAINED
    clf = KnnClassifier(tuple(samples), config.k)
    per_class = Counter(s.label for s in samples)
    loo = leave_one_out(samples, config.k)
    if min(per_class.values()) < config.k:
        print(f"warning: leave-one-out is degenerate, some class has fewer than k={config.k} "
              f"samples ({dict(sorted(per_class.items()))})", file=sys.stderr)
    if loo is None:
        print("leave-one-out accuracy: n/a")
    else:
        print(f"leave-one-out accuracy: {loo:.1%} over {len(samples)} samples")
    out = Path(args.output)
    if out.is_dir() or not out.suffix:
        out.mkdir(parents=True, exist_ok=True)
        out = out / "training.json"
    if not args.dry_run:
        _write_json(out, training_set_to_dict(clf, loo))
        print(f"training set written to {out}")
    return EXIT_OK


# -- report -----------------------------------------------------------------------

def _collect_reports(paths):
    found = []
    for p in map(Path, paths):
        if p.is_file():
            found.append(p)
        elif p.is_dir():
            found.extend(sorted(p.glob("report.json")) or sorted(p.glob("*/report.json")))
    return found


def cmd_report(args, config):
    files = _collect_reports(args.paths)
    if not files:
        raise UsageError("no report.json files found")
    reports = [json.loads(f.read_text(encoding="utf-8")) for f in files]
    if args.canonical:
        for r in reports:
            sys.stdout.write(canonical_report(r))
        return EXIT_OK
    rows = []
    for r in reports:
        dims = r.get("dims_m")
        tilt = r.get("tilt_deg")
        rows.append((r.get("scan_id", "?"), r.get("status", "?"), r.get("class") or "-",
                     f"{r['confidence']:.2f}" if r.get("confidence") is not None else "-",
                     r.get("model_id") or "-",
                     f"{dims[0]:.3f}x{dims[1]:.3f}" if dims else "-",
                     f"{tilt[0]:+.2f}/{tilt[1]:+.2f}" if tilt else "-"))
    head = ("scan", "status", "class", "conf", "model", "dims_m", "tilt_deg")
    widths = [max(len(str(x)) for x in col) for col in zip(head, *rows)]
    for row in (head, *rows):
        print("  ".join(str(x).ljust(w) for x, w in zip(row, widths)).rstrip())
    statuses = Counter(r.get("status") for r in reports)
    summary = {"schema": 1, "reports": len(reports), "status_counts": dict(sorted(statuses.items()))}
    print(json.dumps(summary, sort_keys=True))
    if args.output and not args.dry_run:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        summary["runs"] = [json.loads(canonical_report(r)) for r in reports]
        _write_json(out / "summary.json", summary)
    return EXIT_OK


# -- entry point --------------------------------------------------------------------

def _global_flags(suppress):
    """Global flags; subcommands repeat them with suppressed defaults so a
    flag given before the subcommand is not overwritten."""
    g = argparse.ArgumentParser(add_help=False)

    def dflt(value):
        return argparse.SUPPRESS if suppress else value

    g.add_argument("--config", default=dflt(None), help="JSON pipeline config")
    g.add_argument("--output", "-o", default=dflt("out"), help="output directory")
    g.add_argument("--seed", type=int, default=dflt(0), help="base RNG seed (simulate)")
    g.add_argument("--dry-run", action="store_true", default=dflt(False),
                   help="report only, write no plan")
    g.add_argument("--allow-uncertain", action="store_true", default=dflt(False),
                   help="write plans even for non-unanimous classifications")
    g.add_argument("-v", "--verbose", action="count", default=dflt(0))
    return g


def build_parser():
    common = _global_flags(suppress=True)

    p = argparse.ArgumentParser(prog="sprayscan", parents=[_global_flags(suppress=False)],
                                description="Laser-scan workpieces and plan their coating.",
                                epilog=__doc__.split("\n", 1)[1],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="render synthetic scans")
    s.add_argument("--classes", default="all", help="'all' or comma list")
    s.add_argument("--sizes", default="all", help="'all' or comma list of model ids")
    s.add_argument("--tilts", default="0", help="comma list of pitch tilts in degrees")
    s.add_argument("--repeats", type=int, default=1, help="seeds per scenario (seed, seed+1, ...)")
    s.add_argument("--pixel-noise", type=float, default=2.0, help="pixel noise sigma")
    s.add_argument("--depth-noise", type=float, default=0.5, help="depth noise sigma, mm")
    s.add_argument("--image-size", type=_parse_size, default=(1024, 768), help="WxH")
    s.add_argument("--fov", type=float, default=60.0, help="horizontal field of view, degrees")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("process", parents=[common], help="process scan directories")
    s.add_argument("scan_dirs", nargs="+")
    s.add_argument("--calibration", help="calibration JSON (default: next to the scan)")
    s.add_argument("--training", help="training-set JSON")
    s.set_defaults(func=cmd_process)

    s = sub.add_parser("train", parents=[common], help="build a training set")
    s.add_argument("files", nargs="+", help="features.json files or sample lists")
    s.add_argument("--labels-from-truth", metavar="SIM_DIR",
                   help="label features files from SIM_DIR/<scan_id>/truth.json")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("report", parents=[common], help="summarise run reports")
    s.add_argument("paths", nargs="+", help="report.json files or output directories")
    s.add_argument("--canonical", action="store_true",
                   help="print canonicalised reports (timings dropped)")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(args)
        return args.func(args, config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except Untrained as exc:
        print(f"untrained: {exc}", file=sys.stderr)
        return EXIT_UNTRAINED
    except NeverVisible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:  # noqa: BLE001 - last-resort exit code
        log.exception("unexpected failure")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
