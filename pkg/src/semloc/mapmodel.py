"""Compact semantic landmark map.

A map stores line landmarks (two 3D control points, class, rough size, road
index), point landmarks (centroid, class, size, road index), and lane
polylines. Landmarks are fitted from labeled 3D point clusters; preselection
extracts the subset likely visible from a rough pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial.distance import pdist

# A landmark is kept by preselection when rough_size / distance exceeds this.
MIN_SIZE_RATIO = 0.017
# Lane polyline points this far ahead of the rough position (meters, along
# the rough heading) are fitted into a synthetic lane landmark.
LANE_WINDOW_M = (5.0, 20.0)

_COINCIDENT_EPS = 1e-9
_MIN_SEGMENT_M = 1e-6
_POINT_SIZE_FLOOR_M = 1e-3


class DegenerateCluster(ValueError):
    """Cluster cannot support a line fit (fewer than 2 distinct points)."""


class ParseError(ValueError):
    """Malformed map text; carries the 1-based line number."""

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class SemanticClass(Enum):
    """Landmark/detection classes. All but TRAFFIC_SIGN are line-shaped."""

    POLE_LIKE = "POLE"
    TRAFFIC_SIGN = "SIGN"
    LANE_LINE = "LANE"
    MILESTONE = "MILESTONE"

    @property
    def is_line_shaped(self) -> bool:
        return self is not SemanticClass.TRAFFIC_SIGN


@dataclass(frozen=True, eq=False)
class LineLandmark:
    """Line-shaped landmark summarized by two 3D control points."""

    p1: np.ndarray
    p2: np.ndarray
    semantic: SemanticClass
    size_m: float
    road_index: int
    id: int

    def __post_init__(self):
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float))
        object.__setattr__(self, "p2", np.asarray(self.p2, dtype=float))
        if not self.semantic.is_line_shaped:
            raise ValueError(f"{self.semantic} is not a line-shaped class")
        if float(np.linalg.norm(self.p2 - self.p1)) <= _MIN_SEGMENT_M:
            raise ValueError("control points coincide")
        if self.size_m <= 0:
            raise ValueError("size_m must be positive")


@dataclass(frozen=True, eq=False)
class PointLandmark:
    """Point-shaped landmark: cluster centroid plus its largest extent."""

    p: np.ndarray
    semantic: SemanticClass
    size_m: float
    road_index: int
    id: int

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if self.semantic.is_line_shaped:
            raise ValueError(f"{self.semantic} is not a point-shaped class")
        if self.size_m <= 0:
            raise ValueError("size_m must be positive")


@dataclass(frozen=True, eq=False)
class LanePolyline:
    """Lane line stored as an ordered 3D point sequence along the travel
    direction."""

    points: np.ndarray
    road_index: int
    id: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise ValueError("polyline needs at least 2 points of shape (n, 3)")
        if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) <= 0):
            raise ValueError("consecutive polyline points must be distinct")
        object.__setattr__(self, "points", pts)


@dataclass(eq=False)
class SemanticMap:
    lines: list = field(default_factory=list)
    points: list = field(default_factory=list)
    lanes: list = field(default_factory=list)

    def __post_init__(self):
        ids = [lm.id for lm in self.lines] + [lm.id for lm in self.points] + \
            [ln.id for ln in self.lanes]
        if len(ids) != len(set(ids)):
            raise ValueError("landmark ids must be unique within the map")

    def is_empty(self) -> bool:
        return not (self.lines or self.points or self.lanes)


@dataclass(frozen=True, eq=False)
class RoughPose:
    """Approximate camera location used for landmark preselection."""

    position: np.ndarray
    heading: np.ndarray  # unit (x, z) direction in the ground plane
    road_index: int

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        heading = np.asarray(self.heading, dtype=float)
        norm = float(np.linalg.norm(heading))
        if not 1e-6 < norm < 1e6:
            raise ValueError("rough heading must have nonzero norm")
        object.__setattr__(self, "heading", heading / norm)


@dataclass(eq=False)
class PreselectedSet:
    """Landmarks surviving preselection, in map order; synthetic lane
    segments (fitted from polyline windows, id = polyline id) come last."""

    lines: list = field(default_factory=list)
    points: list = field(default_factory=list)


def fit_line_landmark(cluster, semantic: SemanticClass, road_index: int,
                      landmark_id: int = 0) -> LineLandmark:
    """Fit a line landmark to a 3D point cluster.

    Total least squares: the principal axis of the cluster through its
    centroid. The control points are the two extreme projections of the
    cluster onto that axis, ordered lexicographically; size is their
    separation.
    """
    pts = np.asarray(cluster, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 2:
        raise DegenerateCluster("need at least 2 points to fit a line")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    if float(np.max(np.linalg.norm(centered, axis=1))) < _COINCIDENT_EPS:
        raise DegenerateCluster("all cluster points coincide")
    scatter = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(scatter)
    axis = eigvecs[:, int(np.argmax(eigvals))]
    axis = _lex_positive(axis)
    t = centered @ axis
    p1 = centroid + t.min() * axis
    p2 = centroid + t.max() * axis
    if tuple(p2) < tuple(p1):
        p1, p2 = p2, p1
    size = float(np.linalg.norm(p2 - p1))
    if size <= _MIN_SEGMENT_M:
        raise DegenerateCluster("cluster has no measurable extent along its axis")
    return LineLandmark(p1, p2, semantic, size, road_index, landmark_id)


def fit_point_landmark(cluster, semantic: SemanticClass, road_index: int,
                       landmark_id: int = 0) -> PointLandmark:
    """Fit a point landmark: cluster centroid, size = largest pairwise
    distance (floored at 1 mm for singletons)."""
    pts = np.asarray(cluster, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("empty cluster")
    centroid = pts.mean(axis=0)
    size = float(pdist(pts).max()) if pts.shape[0] > 1 else 0.0
    return PointLandmark(centroid, semantic, max(size, _POINT_SIZE_FLOOR_M),
                         road_index, landmark_id)


def _lex_positive(v: np.ndarray) -> np.ndarray:
    for comp in v:
        if comp > 0:
            return v
        if comp < 0:
            return -v
    return v


def preselect(semantic_map: SemanticMap, rough: RoughPose,
              min_size_ratio: float = MIN_SIZE_RATIO,
              lane_window_m: tuple = LANE_WINDOW_M) -> PreselectedSet:
    """Select landmarks likely visible from a rough pose.

    Keeps landmarks on the same road whose size/distance ratio strictly
    exceeds ``min_size_ratio`` (3D distance to the first control point).
    Lane polylines on the road contribute a synthetic straight lane landmark
    fitted to their points 5..20 m ahead along the rough heading.
    """
    out = PreselectedSet()
    pos = rough.position
    for lm in semantic_map.lines:
        if lm.road_index != rough.road_index:
            continue
        dist = float(np.linalg.norm(pos - lm.p1))
        if dist > 0 and lm.size_m / dist > min_size_ratio:
            out.lines.append(lm)
    for lm in semantic_map.points:
        if lm.road_index != rough.road_index:
            continue
        dist = float(np.linalg.norm(pos - lm.p))
        if dist > 0 and lm.size_m / dist > min_size_ratio:
            out.points.append(lm)
    near, far = lane_window_m
    for lane in semantic_map.lanes:
        if lane.road_index != rough.road_index:
            continue
        ground_delta = lane.points[:, [0, 2]] - pos[[0, 2]]
        along = ground_delta @ rough.heading
        window = lane.points[(along >= near) & (along <= far)]
        if window.shape[0] >= 2:
            try:
                out.lines.append(fit_line_landmark(
                    window, SemanticClass.LANE_LINE, lane.road_index,
                    landmark_id=lane.id))
            except DegenerateCluster:
                pass
    return out


# --- text serialization -----------------------------------------------------
#
# Line-oriented ASCII, '#' starts a comment, fields whitespace-separated:
#   SEMMAP 1
#   L <id> <class> <road> <x1> <y1> <z1> <x2> <y2> <z2> <size>
#   P <id> <class> <road> <x> <y> <z> <size>
#   LANE <id> <road> <n> <x1> <y1> <z1> ... <xn> <yn> <zn>
# Coordinates in meters with 6 decimal places.

_HEADER = "SEMMAP 1"


def _fmt(values) -> str:
    return " ".join(f"{v:.6f}" for v in values)


def serialize_map(semantic_map: SemanticMap) -> str:
    rows = [_HEADER]
    for lm in semantic_map.lines:
        rows.append(
            f"L {lm.id} {lm.semantic.value} {lm.road_index} "
            f"{_fmt(lm.p1)} {_fmt(lm.p2)} {lm.size_m:.6f}")
    for lm in semantic_map.points:
        rows.append(
            f"P {lm.id} {lm.semantic.value} {lm.road_index} "
            f"{_fmt(lm.p)} {lm.size_m:.6f}")
    for lane in semantic_map.lanes:
        rows.append(
            f"LANE {lane.id} {lane.road_index} {lane.points.shape[0]} "
            f"{_fmt(lane.points.ravel())}")
    return "\n".join(rows) + "\n"


def _parse_class(tag: str, line_no: int, line_shaped: bool) -> SemanticClass:
    try:
        cls = SemanticClass(tag)
    except ValueError:
        raise ParseError(line_no, f"unknown class {tag!r}") from None
    if cls.is_line_shaped != line_shaped:
        kind = "line" if line_shaped else "point"
        raise ParseError(line_no, f"class {tag} is not {kind}-shaped")
    return cls


def _parse_floats(fields, line_no: int):
    try:
        return [float(f) for f in fields]
    except ValueError:
        raise ParseError(line_no, "malformed numeric field") from None


def parse_map(text: str) -> SemanticMap:
    lines: list = []
    points: list = []
    lanes: list = []
    saw_header = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        fields = stripped.split()
        if not saw_header:
            if fields != _HEADER.split():
                raise ParseError(line_no, f"expected {_HEADER!r} header")
            saw_header = True
            continue
        tag = fields[0]
        try:
            if tag == "L":
                if len(fields) != 11:
                    raise ParseError(line_no, f"L record needs 11 fields, got {len(fields)}")
                vals = _parse_floats(fields[4:], line_no)
                lines.append(LineLandmark(
                    vals[0:3], vals[3:6],
                    _parse_class(fields[2], line_no, line_shaped=True),
                    vals[6], int(fields[3]), int(fields[1])))
            elif tag == "P":
                if len(fields) != 8:
                    raise ParseError(line_no, f"P record needs 8 fields, got {len(fields)}")
                vals = _parse_floats(fields[4:], line_no)
                points.append(PointLandmark(
                    vals[0:3],
                    _parse_class(fields[2], line_no, line_shaped=False),
                    vals[3], int(fields[3]), int(fields[1])))
            elif tag == "LANE":
                if len(fields) < 4:
                    raise ParseError(line_no, "LANE record needs id, road and count")
                n = int(fields[3])
                if len(fields) != 4 + 3 * n:
                    raise ParseError(
                        line_no, f"LANE record promises {n} points but has "
                        f"{len(fields) - 4} coordinate fields")
                vals = _parse_floats(fields[4:], line_no)
                lanes.append(LanePolyline(
                    np.array(vals).reshape(n, 3), int(fields[2]), int(fields[1])))
            else:
                raise ParseError(line_no, f"unknown record tag {tag!r}")
        except ParseError:
            raise
        except ValueError as exc:
            raise ParseError(line_no, str(exc)) from None
    if not saw_header:
        raise ParseError(1, "empty input, missing header")
    try:
        return SemanticMap(lines, points, lanes)
    except ValueError as exc:
        raise ParseError(len(text.splitlines()), str(exc)) from None


def save_map(semantic_map: SemanticMap, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_map(semantic_map))


def load_map(path) -> SemanticMap:
    with open(path) as fh:
        return parse_map(fh.read())
