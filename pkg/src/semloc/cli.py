"""Command-line entry point.

Subcommands:
  compile-map   fit landmarks from labeled 3D point clusters into a map file
  synth         generate a synthetic world: map, detections, ground truth, masks
  localize      run the per-frame localization pipeline over a sequence
  eval          compare a result CSV against ground truth
  landscape     export the cost surface over two pose parameters as CSV

``localize`` and ``landscape`` read their inputs either from individual
flags or from a JSON manifest (--manifest); flags override manifest values.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .association import AssociationConfig, NoValidAssociation
from .camera import CameraPose, Intrinsics, parse_intrinsics, serialize_intrinsics
from .features import ExtractionConfig, extract_features, write_mask_files
from .mapmodel import (DegenerateCluster, ParseError, SemanticClass,
                       SemanticMap, fit_line_landmark, fit_point_landmark,
                       parse_map, save_map)
from .pipeline import (FrameStatus, evaluate, parse_detections,
                       parse_ground_truth, parse_result, run_sequence,
                       serialize_detections, serialize_ground_truth,
                       serialize_result)
from .residual import ReprojectionObjective, ResidualConfig, nearest_lane_height
from .solver import SolverConfig, cost_landscape
from .synthworld import (WorldConfig, generate_world, render_frames,
                         render_masks)
from .association import closest_correspond
from .mapmodel import RoughPose, preselect
from .pipeline import heading_from_pose


class CliError(Exception):
    pass


def _read(path, what):
    path = Path(path)
    if not path.exists():
        raise CliError(f"{what} file not found: {path}")
    return path.read_text()


def _config_from(block: dict, cls, what: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(block) - fields
    if unknown:
        raise CliError(f"unknown {what} settings: {sorted(unknown)}")
    return cls(**block)


def _load_manifest(args) -> dict:
    manifest = {}
    if args.manifest:
        try:
            manifest = json.loads(_read(args.manifest, "manifest"))
        except json.JSONDecodeError as exc:
            raise CliError(f"manifest is not valid JSON: {exc}") from None
    return manifest


def _resolve(args, manifest, key, required=True):
    value = getattr(args, key.replace("-", "_"), None)
    if value is None:
        value = manifest.get(key)
    if value is None and required:
        raise CliError(f"missing required input {key!r} (flag or manifest)")
    return value


def _configs(args, manifest):
    assoc_block = dict(manifest.get("association", {}))
    if args.seed is not None:
        assoc_block["rng_seed"] = args.seed
    elif "seed" in manifest and "rng_seed" not in assoc_block:
        assoc_block["rng_seed"] = manifest["seed"]
    assoc = _config_from(assoc_block, AssociationConfig, "association")
    solver = _config_from(dict(manifest.get("solver", {})), SolverConfig, "solver")
    residual = _config_from(dict(manifest.get("residual", {})), ResidualConfig,
                            "residual")
    preselect_block = manifest.get("preselect", {})
    min_size_ratio = preselect_block.get("min_size_ratio")
    return assoc, solver, residual, min_size_ratio


def _frames_from_masks(mask_dir, manifest):
    """Build per-frame detections by running feature extraction over
    <frame>_<class>.pgm rasters found in a directory."""
    from .features import read_mask_files
    from .pipeline import FrameInput

    mask_dir = Path(mask_dir)
    if not mask_dir.is_dir():
        raise CliError(f"mask directory not found: {mask_dir}")
    frame_ids = sorted({int(p.name.split("_", 1)[0])
                        for p in mask_dir.glob("*.pgm")})
    if not frame_ids:
        raise CliError(f"no .pgm masks in {mask_dir}")
    extraction = _config_from(dict(manifest.get("extraction", {})),
                              ExtractionConfig, "extraction")
    road_index = int(manifest.get("road_index", 0))
    frames = []
    for frame_id in frame_ids:
        mask = read_mask_files(mask_dir, frame_id)
        det_lines, det_points = extract_features(mask, extraction)
        frames.append(FrameInput(frame_id, det_lines, det_points, road_index))
    return frames


# --- compile-map ------------------------------------------------------------
#
# Cluster file format (line oriented, '#' comments):
#   CLUSTER <LINE|POINT> <class> <road_index>
#   <x> <y> <z>          (one labeled 3D point per row)
#   ...


def _parse_clusters(text: str, path: str):
    clusters = []
    header = None
    points: list = []

    def flush(line_no):
        if header is None:
            return
        if not points:
            raise CliError(f"{path}:{line_no}: cluster without points")
        clusters.append((header, np.array(points)))

    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        fields = stripped.split()
        if fields[0] == "CLUSTER":
            flush(line_no)
            points = []
            if len(fields) != 4 or fields[1] not in ("LINE", "POINT"):
                raise CliError(
                    f"{path}:{line_no}: expected CLUSTER <LINE|POINT> "
                    f"<class> <road_index>")
            try:
                semantic = SemanticClass(fields[2])
            except ValueError:
                raise CliError(f"{path}:{line_no}: unknown class {fields[2]!r}") \
                    from None
            header = (fields[1], semantic, int(fields[3]), line_no)
        else:
            if header is None:
                raise CliError(f"{path}:{line_no}: point before any CLUSTER header")
            if len(fields) != 3:
                raise CliError(f"{path}:{line_no}: expected 3 coordinates")
            try:
                points.append([float(f) for f in fields])
            except ValueError:
                raise CliError(f"{path}:{line_no}: malformed coordinate") from None
    flush(len(text.splitlines()) + 1)
    return clusters


def cmd_compile_map(args) -> int:
    lines, points = [], []
    next_id = 0
    for path in args.clusters:
        for (kind, semantic, road, line_no), pts in \
                _parse_clusters(_read(path, "cluster"), str(path)):
            try:
                if kind == "LINE":
                    lines.append(fit_line_landmark(pts, semantic, road,
                                                   landmark_id=next_id))
                else:
                    points.append(fit_point_landmark(pts, semantic, road,
                                                     landmark_id=next_id))
            except (DegenerateCluster, ValueError) as exc:
                raise CliError(f"{path}:{line_no}: {exc}") from None
            next_id += 1
    save_map(SemanticMap(lines, points, []), args.out)
    print(f"wrote {len(lines)} line and {len(points)} point landmarks "
          f"to {args.out}")
    return 0


# --- synth ------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = WorldConfig(
        corridor_length_m=args.length,
        pole_spacing_m=args.pole_spacing,
        pole_sides=args.pole_sides,
        frame_spacing_m=args.frame_spacing,
        pixel_noise_sigma=args.noise_sigma,
        outlier_rate=args.outlier_rate,
        dropout_rate=args.dropout_rate,
        rng_seed=args.seed if args.seed is not None else 0,
    )
    semantic_map, trajectory = generate_world(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_map(semantic_map, out / "map.txt")
    (out / "intrinsics.txt").write_text(serialize_intrinsics(config.intrinsics))
    rendered = render_frames(semantic_map, trajectory, config)
    (out / "detections.txt").write_text(
        serialize_detections([r.frame for r in rendered]))
    truth = {k: pose for k, pose in enumerate(trajectory)}
    (out / "groundtruth.txt").write_text(serialize_ground_truth(truth))
    if not args.no_masks:
        masks_dir = out / "masks"
        for k, pose in enumerate(trajectory):
            mask, _, _ = render_masks(semantic_map, pose, config)
            write_mask_files(masks_dir, k, mask)
    print(f"synthesized {len(trajectory)} frames, "
          f"{len(semantic_map.lines)} poles, {len(semantic_map.points)} signs, "
          f"{len(semantic_map.lanes)} lanes -> {out}")
    return 0


# --- localize ---------------------------------------------------------------


def _load_bootstrap(path) -> list:
    poses = parse_ground_truth(_read(path, "bootstrap"))
    if len(poses) < 2:
        raise CliError("bootstrap file must contain at least two GT records")
    first_two = sorted(poses)[:2]
    return [poses[k] for k in first_two]


def cmd_localize(args) -> int:
    manifest = _load_manifest(args)
    semantic_map = parse_map(_read(_resolve_path(args, manifest, "map"), "map"))
    detections_path = _resolve_path(args, manifest, "detections", required=False)
    masks_path = _resolve_path(args, manifest, "masks", required=False)
    if detections_path:
        frames = parse_detections(_read(detections_path, "detections"))
    elif masks_path:
        frames = _frames_from_masks(masks_path, manifest)
    else:
        raise CliError("missing required input: 'detections' or 'masks'")
    intrinsics = parse_intrinsics(
        _read(_resolve_path(args, manifest, "intrinsics"), "intrinsics"))
    bootstrap = _load_bootstrap(_resolve_path(args, manifest, "bootstrap"))
    assoc, solver, residual, min_size_ratio = _configs(args, manifest)

    result = run_sequence(semantic_map, frames, bootstrap, intrinsics,
                          assoc, solver, residual, min_size_ratio)
    out = _resolve(args, manifest, "out", required=False) or "result.csv"
    Path(out).write_text(serialize_result(result))
    n_loc = result.count(FrameStatus.LOCALIZED)
    n_coast = result.count(FrameStatus.COASTED)
    print(f"{len(result.records)} frames: {n_loc} localized, "
          f"{n_coast} coasted -> {out}")

    gt_path = _resolve_path(args, manifest, "ground-truth", required=False)
    if gt_path:
        summary = evaluate(result, parse_ground_truth(_read(gt_path, "ground truth")))
        result.summary = summary
        _print_summary(summary)
    return 0


def _resolve_path(args, manifest, key, required=True):
    value = _resolve(args, manifest, key, required)
    if value is None:
        return None
    if args.manifest and key in manifest and \
            getattr(args, key.replace("-", "_"), None) is None:
        base = Path(args.manifest).parent
        return str((base / value) if not Path(value).is_absolute() else value)
    return value


def _print_summary(summary) -> None:
    print(f"frames evaluated      {summary.n_frames}")
    print(f"rms position error    {summary.rms_position_m:.6f} m")
    print(f"max position error    {summary.max_position_m:.6f} m")
    print(f"rms lateral error     {summary.rms_lateral_m:.6f} m")
    print(f"rms longitudinal err  {summary.rms_longitudinal_m:.6f} m")
    print(f"rms vertical error    {summary.rms_vertical_m:.6f} m")
    print(f"mean angle error      {summary.mean_angle_rad:.6f} rad")
    print(f"max angle error       {summary.max_angle_rad:.6f} rad")
    print(f"below 0.5 m           {100.0 * summary.fraction_below_half_meter:.2f}%")


# --- eval -------------------------------------------------------------------


def cmd_eval(args) -> int:
    result = parse_result(_read(args.result, "result"))
    truth = parse_ground_truth(_read(args.ground_truth, "ground truth"))
    summary = evaluate(result, truth)
    _print_summary(summary)
    if args.json:
        Path(args.json).write_text(
            json.dumps(dataclasses.asdict(summary), indent=2) + "\n")
    return 0


# --- landscape --------------------------------------------------------------


def cmd_landscape(args) -> int:
    manifest = _load_manifest(args)
    semantic_map = parse_map(_read(_resolve_path(args, manifest, "map"), "map"))
    frames = parse_detections(
        _read(_resolve_path(args, manifest, "detections"), "detections"))
    intrinsics = parse_intrinsics(
        _read(_resolve_path(args, manifest, "intrinsics"), "intrinsics"))
    truth = parse_ground_truth(
        _read(_resolve_path(args, manifest, "ground-truth"), "ground truth"))
    assoc, _, residual, min_size_ratio = _configs(args, manifest)

    frame = next((f for f in frames if f.frame_id == args.frame), None)
    if frame is None:
        raise CliError(f"frame {args.frame} not present in detections")
    if args.frame not in truth:
        raise CliError(f"frame {args.frame} not present in ground truth")
    center = truth[args.frame]

    rough = RoughPose(center.position, heading_from_pose(center),
                      frame.road_index)
    kwargs = {"min_size_ratio": min_size_ratio} if min_size_ratio else {}
    selected = preselect(semantic_map, rough, **kwargs)
    corr = closest_correspond(selected, frame.det_lines, frame.det_points,
                              center, intrinsics,
                              assoc.gate_line_refine_px,
                              assoc.gate_point_refine_px)
    if len(corr) == 0:
        raise CliError("no correspondences at the center pose")
    y_lane = nearest_lane_height(selected.lines, center.position)
    objective = ReprojectionObjective(selected, frame.det_lines,
                                      frame.det_points, corr, intrinsics,
                                      residual, y_lane)
    try:
        dim_a, dim_b = args.dims.split(",")
        half_a, half_b = (float(v) for v in args.half_ranges.split(","))
    except ValueError:
        raise CliError("--dims and --half-ranges take two comma-separated "
                       "values") from None
    a_vals, b_vals, grid = cost_landscape(objective, center, dim_a.strip(),
                                          dim_b.strip(), half_a, half_b,
                                          args.grid)
    rows = ["a_value,b_value,sqrtR"]
    for i, a in enumerate(a_vals):
        for j, b in enumerate(b_vals):
            rows.append(f"{a:.9f},{b:.9f},{grid[i, j]:.9f}")
    Path(args.out).write_text("\n".join(rows) + "\n")
    print(f"wrote {args.grid}x{args.grid} landscape over "
          f"({dim_a.strip()}, {dim_b.strip()}) to {args.out}")
    return 0


# --- argument wiring --------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semloc",
        description="Monocular localization against a compact semantic map")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile-map", help="fit landmarks from point clusters")
    p.add_argument("clusters", nargs="+", help="labeled cluster files")
    p.add_argument("--out", required=True, help="output map file")
    p.set_defaults(func=cmd_compile_map)

    p = sub.add_parser("synth", help="generate a synthetic world")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--length", type=float, default=270.0,
                   help="corridor length in meters")
    p.add_argument("--pole-spacing", type=float, default=13.0)
    p.add_argument("--pole-sides", type=int, default=1, choices=(1, 2))
    p.add_argument("--frame-spacing", type=float, default=1.4)
    p.add_argument("--noise-sigma", type=float, default=0.0,
                   help="pixel noise sigma")
    p.add_argument("--outlier-rate", type=float, default=0.0)
    p.add_argument("--dropout-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-masks", action="store_true",
                   help="skip writing per-frame mask images")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("localize", help="run the localization pipeline")
    p.add_argument("--manifest", help="JSON manifest with paths and configs")
    p.add_argument("--map")
    p.add_argument("--detections")
    p.add_argument("--masks",
                   help="directory of <frame>_<class>.pgm masks, used instead "
                        "of a detections file")
    p.add_argument("--intrinsics")
    p.add_argument("--bootstrap",
                   help="GT-format file; first two records bootstrap the run")
    p.add_argument("--ground-truth", dest="ground_truth",
                   help="optional GT file for an immediate evaluation")
    p.add_argument("--out", help="result CSV path (default result.csv)")
    p.add_argument("--seed", type=int, default=None,
                   help="association RNG seed override")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("eval", help="evaluate a result CSV")
    p.add_argument("--result", required=True)
    p.add_argument("--ground-truth", dest="ground_truth", required=True)
    p.add_argument("--json", help="also write the metrics as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("landscape", help="export a cost surface CSV")
    p.add_argument("--manifest")
    p.add_argument("--map")
    p.add_argument("--detections")
    p.add_argument("--intrinsics")
    p.add_argument("--ground-truth", dest="ground_truth")
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--dims", default="x,z",
                   help="two of x,y,z,yaw,pitch,roll (comma-separated)")
    p.add_argument("--half-ranges", default="2.0,2.0",
                   help="half range per dimension (m or rad)")
    p.add_argument("--grid", type=int, default=21)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_landscape)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ParseError, ValueError, NoValidAssociation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
