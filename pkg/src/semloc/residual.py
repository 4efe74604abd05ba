"""Reprojection residuals and their Jacobian.

The residual vector stacks, in order: one line distance per line pair, one
point distance per point pair, then the weighted flat-ground terms (pitch
in degrees, roll in degrees, and, when a lane height is available, the
camera-height offset in centimeters). The total cost is the squared norm of
this vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import (MIN_DEPTH_M, CameraPose, Intrinsics, ProjectedLine,
                     rotation_derivatives)
from .mapmodel import PreselectedSet, SemanticClass

DEG_PER_RAD = 180.0 / math.pi
CM_PER_M = 100.0

# Sentinel: resolve the lane height from the preselected set at the current
# pose instead of taking a caller-supplied value.
AUTO_LANE_HEIGHT = "auto"


class EmptyCorrespondence(ValueError):
    """No line and no point pairs; the pose is unconstrained by data."""


class DegenerateDetection(ValueError):
    """Detected line endpoints coincide; its direction is undefined."""


@dataclass(frozen=True)
class ResidualConfig:
    """Weights and unit constants for the stacked residual.

    The flat-ground terms use centimeters for length and degrees for angles;
    image distances stay in pixels. Poses and maps themselves remain in
    meters and radians.
    """

    lambda_n: float = 0.001
    camera_height_m: float = 1.6
    behind_camera_penalty_px: float = 1e4

    def __post_init__(self):
        if self.lambda_n < 0:
            raise ValueError("lambda_n must be non-negative")


@dataclass(eq=False)
class CorrespondenceSet:
    """Pairs of (preselected landmark index, detected feature index)."""

    line_pairs: list = field(default_factory=list)
    point_pairs: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.line_pairs) + len(self.point_pairs)

    def validate(self, preselected: PreselectedSet, det_lines, det_points) -> None:
        """Check index ranges, class agreement, and that each landmark is
        paired at most once. A detection may serve several landmarks; the
        hypothesis validation downstream resolves such conflicts."""
        for pairs, landmarks, dets, kind in (
                (self.line_pairs, preselected.lines, det_lines, "line"),
                (self.point_pairs, preselected.points, det_points, "point")):
            seen = set()
            for lm_idx, det_idx in pairs:
                if not 0 <= lm_idx < len(landmarks):
                    raise ValueError(f"{kind} landmark index {lm_idx} out of range")
                if not 0 <= det_idx < len(dets):
                    raise ValueError(f"{kind} detection index {det_idx} out of range")
                if lm_idx in seen:
                    raise ValueError(f"{kind} landmark {lm_idx} paired twice")
                seen.add(lm_idx)
                if landmarks[lm_idx].semantic is not dets[det_idx].semantic:
                    raise ValueError(
                        f"class mismatch in {kind} pair ({lm_idx}, {det_idx})")


def _cross2(a: np.ndarray, b: np.ndarray) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def line_distance(proj: ProjectedLine, det) -> float:
    """Mean perpendicular distance of the two projected control points to
    the infinite line through the detected endpoints (pixels)."""
    m1, m2 = np.asarray(det.m1, dtype=float), np.asarray(det.m2, dtype=float)
    # Canonical endpoint order makes the value bit-identical under swaps.
    if tuple(m2) < tuple(m1):
        m1, m2 = m2, m1
    d = m2 - m1
    length = float(np.linalg.norm(d))
    if length < 1e-6:
        raise DegenerateDetection("detected line endpoints coincide")
    return (abs(_cross2(d, proj.u1 - m1)) + abs(_cross2(d, proj.u2 - m1))) \
        / (2.0 * length)


def point_distance(proj, det) -> float:
    """Euclidean pixel distance between projection and detected point."""
    return float(np.linalg.norm(np.asarray(proj, dtype=float) - det.m))


def nearest_lane_height(preselected_lines, position) -> float | None:
    """Height (map Y) of the lane control point nearest to a position,
    or None when no lane landmark was preselected."""
    position = np.asarray(position, dtype=float)
    best = None
    best_dist = math.inf
    for lm in preselected_lines:
        if lm.semantic is not SemanticClass.LANE_LINE:
            continue
        for cp in (lm.p1, lm.p2):
            dist = float(np.linalg.norm(cp - position))
            if dist < best_dist:
                best_dist = dist
                best = float(cp[1])
    return best


def soft_constraint(pose: CameraPose, y_lane: float | None,
                    config: ResidualConfig) -> np.ndarray:
    """Unweighted flat-ground terms: (pitch deg, roll deg, height offset cm).

    The height entry is omitted when no lane height is available. The
    squared norm of the returned vector is the soft-constraint cost before
    the lambda_n^2 weighting.
    """
    terms = [pose.pitch * DEG_PER_RAD, pose.roll * DEG_PER_RAD]
    if y_lane is not None:
        terms.append((pose.y - (y_lane + config.camera_height_m)) * CM_PER_M)
    return np.array(terms)


class ReprojectionObjective:
    """Residual/Jacobian provider for a fixed correspondence set.

    Precomputes per-pair geometry once; each evaluation is a handful of
    vectorized operations. Pairs whose landmark fails the cheirality guard
    at the evaluated pose contribute a constant penalty row with zero
    gradient, which repels the optimizer from accepting such steps without
    breaking the iteration.
    """

    def __init__(self, preselected: PreselectedSet, det_lines, det_points,
                 corr: CorrespondenceSet, intrinsics: Intrinsics,
                 config: ResidualConfig = ResidualConfig(),
                 y_lane: float | None = None):
        corr.validate(preselected, det_lines, det_points)
        if len(corr) == 0:
            raise EmptyCorrespondence("correspondence set has no pairs")
        self.intrinsics = intrinsics
        self.config = config
        self.y_lane = y_lane
        self.n_lines = len(corr.line_pairs)
        self.n_points = len(corr.point_pairs)

        pts = []
        dirs, anchors, lengths = [], [], []
        for lm_idx, det_idx in corr.line_pairs:
            lm, det = preselected.lines[lm_idx], det_lines[det_idx]
            m1, m2 = np.asarray(det.m1, dtype=float), np.asarray(det.m2, dtype=float)
            if tuple(m2) < tuple(m1):
                m1, m2 = m2, m1
            d = m2 - m1
            length = float(np.linalg.norm(d))
            if length < 1e-6:
                raise DegenerateDetection(
                    f"detected line {det_idx} endpoints coincide")
            pts.extend((lm.p1, lm.p2))
            dirs.append(d)
            anchors.append(m1)
            lengths.append(length)
        det_pts = []
        for lm_idx, det_idx in corr.point_pairs:
            pts.append(preselected.points[lm_idx].p)
            det_pts.append(np.asarray(det_points[det_idx].m, dtype=float))

        self._world = np.array(pts, dtype=float).reshape(-1, 3)
        self._line_dir = np.array(dirs, dtype=float).reshape(-1, 2)
        self._line_anchor = np.array(anchors, dtype=float).reshape(-1, 2)
        self._line_len = np.array(lengths, dtype=float)
        self._det_pts = np.array(det_pts, dtype=float).reshape(-1, 2)

    @property
    def n_rows(self) -> int:
        soft = 2 if self.y_lane is None else 3
        return self.n_lines + self.n_points + soft

    def _project_all(self, pose: CameraPose):
        rot = pose.rotation()
        rel = self._world - pose.position
        cam = rel @ rot.T
        z = cam[:, 2]
        valid = z > MIN_DEPTH_M
        zs = np.where(valid, z, 1.0)
        k = self.intrinsics
        uv = np.empty((cam.shape[0], 2))
        uv[:, 0] = k.fx * cam[:, 0] / zs + k.skew * cam[:, 1] / zs + k.cx
        uv[:, 1] = k.fy * cam[:, 1] / zs + k.cy
        return rot, rel, cam, uv, valid

    def _soft_rows(self, pose: CameraPose) -> np.ndarray:
        return self.config.lambda_n * soft_constraint(pose, self.y_lane, self.config)

    def residual(self, pose: CameraPose) -> np.ndarray:
        _, _, _, uv, valid = self._project_all(pose)
        res = np.empty(self.n_rows)
        nl, npt = self.n_lines, self.n_points
        penalty = self.config.behind_camera_penalty_px
        if nl:
            u1 = uv[0:2 * nl:2] - self._line_anchor
            u2 = uv[1:2 * nl:2] - self._line_anchor
            cross1 = self._line_dir[:, 0] * u1[:, 1] - self._line_dir[:, 1] * u1[:, 0]
            cross2 = self._line_dir[:, 0] * u2[:, 1] - self._line_dir[:, 1] * u2[:, 0]
            dl = (np.abs(cross1) + np.abs(cross2)) / (2.0 * self._line_len)
            ok = valid[0:2 * nl:2] & valid[1:2 * nl:2]
            res[:nl] = np.where(ok, dl, penalty)
        if npt:
            err = uv[2 * nl:] - self._det_pts
            dp = np.linalg.norm(err, axis=1)
            res[nl:nl + npt] = np.where(valid[2 * nl:], dp, penalty)
        res[nl + npt:] = self._soft_rows(pose)
        return res

    def cost(self, pose: CameraPose) -> float:
        r = self.residual(pose)
        return float(r @ r)

    def jacobian(self, pose: CameraPose) -> np.ndarray:
        return self.residual_and_jacobian(pose)[1]

    def _projection_jacobian(self, pose: CameraPose):
        """Projections plus d(pixel)/d(pose) per projected control point."""
        rot, rel, cam, uv, valid = self._project_all(pose)
        n = cam.shape[0]
        k = self.intrinsics
        d_rot = rotation_derivatives(pose.yaw, pose.pitch, pose.roll)

        # d(camera point)/d(pose): translation block is -R, one column per
        # angle from the rotation derivative.
        dcam = np.empty((n, 3, 6))
        dcam[:, :, 0:3] = -rot[np.newaxis, :, :]
        for col, dr in enumerate(d_rot, start=3):
            dcam[:, :, col] = rel @ dr.T

        z = np.where(valid, cam[:, 2], 1.0)
        inv_z = 1.0 / z
        # Pixel derivative rows stacked per projected point: (n, 2, 3).
        duv_dcam = np.zeros((n, 2, 3))
        duv_dcam[:, 0, 0] = k.fx * inv_z
        duv_dcam[:, 0, 1] = k.skew * inv_z
        duv_dcam[:, 0, 2] = -(k.fx * cam[:, 0] + k.skew * cam[:, 1]) * inv_z ** 2
        duv_dcam[:, 1, 1] = k.fy * inv_z
        duv_dcam[:, 1, 2] = -k.fy * cam[:, 1] * inv_z ** 2
        duv = np.einsum("nij,njk->nik", duv_dcam, dcam)  # (n, 2, 6)
        return rot, rel, cam, uv, valid, duv

    def residual_and_jacobian(self, pose: CameraPose):
        rot, rel, cam, uv, valid, duv = self._projection_jacobian(pose)
        res = np.empty(self.n_rows)
        jac = np.zeros((self.n_rows, 6))
        nl, npt = self.n_lines, self.n_points
        penalty = self.config.behind_camera_penalty_px

        if nl:
            u1 = uv[0:2 * nl:2] - self._line_anchor
            u2 = uv[1:2 * nl:2] - self._line_anchor
            cross1 = self._line_dir[:, 0] * u1[:, 1] - self._line_dir[:, 1] * u1[:, 0]
            cross2 = self._line_dir[:, 0] * u2[:, 1] - self._line_dir[:, 1] * u2[:, 0]
            dl = (np.abs(cross1) + np.abs(cross2)) / (2.0 * self._line_len)
            ok = valid[0:2 * nl:2] & valid[1:2 * nl:2]
            res[:nl] = np.where(ok, dl, penalty)
            # d|cross(d, u - m1)|/du = sign(cross) * (-d_y, d_x)
            perp = np.stack([-self._line_dir[:, 1], self._line_dir[:, 0]], axis=1)
            g1 = np.sign(cross1)[:, None] * perp
            g2 = np.sign(cross2)[:, None] * perp
            rows = (np.einsum("ni,nij->nj", g1, duv[0:2 * nl:2]) +
                    np.einsum("ni,nij->nj", g2, duv[1:2 * nl:2])) \
                / (2.0 * self._line_len)[:, None]
            jac[:nl] = np.where(ok[:, None], rows, 0.0)
        if npt:
            err = uv[2 * nl:] - self._det_pts
            dp = np.linalg.norm(err, axis=1)
            ok = valid[2 * nl:]
            res[nl:nl + npt] = np.where(ok, dp, penalty)
            safe = np.where(dp > 1e-12, dp, 1.0)
            unit = err / safe[:, None]
            rows = np.einsum("ni,nij->nj", unit, duv[2 * nl:])
            rows = np.where((dp > 1e-12)[:, None], rows, 0.0)
            jac[nl:nl + npt] = np.where(ok[:, None], rows, 0.0)

        res[nl + npt:] = self._soft_rows(pose)
        lam = self.config.lambda_n
        jac[nl + npt, 4] = lam * DEG_PER_RAD      # pitch row
        jac[nl + npt + 1, 5] = lam * DEG_PER_RAD  # roll row
        if self.y_lane is not None:
            jac[nl + npt + 2, 1] = lam * CM_PER_M
        return res, jac


class SolverObjective:
    """Smooth least-squares formulation of the same alignment problem.

    The mean-of-absolutes line distance has V-shaped facets whose balance
    points trap a Gauss-Newton style minimizer short of the optimum. For
    the solver we therefore split every line pair into its two signed
    per-endpoint perpendicular distances (scaled by 1/sqrt(2)) and every
    point pair into its two pixel error components. The rows are smooth,
    share the exact zero set of the reported residual, and bound its cost
    within a factor of two, so gate decisions stay meaningful while the
    optimizer converges reliably.
    """

    def __init__(self, base: ReprojectionObjective):
        self.base = base

    @property
    def n_rows(self) -> int:
        soft = 2 if self.base.y_lane is None else 3
        return 2 * self.base.n_lines + 2 * self.base.n_points + soft

    def residual(self, pose: CameraPose) -> np.ndarray:
        return self.residual_and_jacobian(pose, with_jacobian=False)[0]

    def jacobian(self, pose: CameraPose) -> np.ndarray:
        return self.residual_and_jacobian(pose)[1]

    def cost(self, pose: CameraPose) -> float:
        r = self.residual(pose)
        return float(r @ r)

    def residual_and_jacobian(self, pose: CameraPose, with_jacobian: bool = True):
        base = self.base
        if with_jacobian:
            rot, rel, cam, uv, valid, duv = base._projection_jacobian(pose)
        else:
            rot, rel, cam, uv, valid = base._project_all(pose)
            duv = None
        nl, npt = base.n_lines, base.n_points
        res = np.empty(self.n_rows)
        jac = np.zeros((self.n_rows, 6)) if with_jacobian else None
        penalty = base.config.behind_camera_penalty_px
        half_sqrt2 = math.sqrt(0.5)

        if nl:
            u1 = uv[0:2 * nl:2] - base._line_anchor
            u2 = uv[1:2 * nl:2] - base._line_anchor
            c1 = (base._line_dir[:, 0] * u1[:, 1] -
                  base._line_dir[:, 1] * u1[:, 0]) / base._line_len
            c2 = (base._line_dir[:, 0] * u2[:, 1] -
                  base._line_dir[:, 1] * u2[:, 0]) / base._line_len
            ok = valid[0:2 * nl:2] & valid[1:2 * nl:2]
            res[0:2 * nl:2] = np.where(ok, half_sqrt2 * c1, penalty)
            res[1:2 * nl:2] = np.where(ok, half_sqrt2 * c2, penalty)
            if with_jacobian:
                perp = np.stack([-base._line_dir[:, 1], base._line_dir[:, 0]],
                                axis=1) * (half_sqrt2 / base._line_len)[:, None]
                rows1 = np.einsum("ni,nij->nj", perp, duv[0:2 * nl:2])
                rows2 = np.einsum("ni,nij->nj", perp, duv[1:2 * nl:2])
                jac[0:2 * nl:2] = np.where(ok[:, None], rows1, 0.0)
                jac[1:2 * nl:2] = np.where(ok[:, None], rows2, 0.0)
        if npt:
            err = uv[2 * nl:] - base._det_pts
            ok = valid[2 * nl:]
            block = np.where(ok[:, None], err, penalty * half_sqrt2)
            res[2 * nl:2 * nl + 2 * npt] = block.ravel()
            if with_jacobian:
                rows = np.where(ok[:, None, None], duv[2 * nl:], 0.0)
                jac[2 * nl:2 * nl + 2 * npt] = rows.reshape(-1, 6)

        res[2 * nl + 2 * npt:] = base._soft_rows(pose)
        if with_jacobian:
            lam = base.config.lambda_n
            jac[2 * nl + 2 * npt, 4] = lam * DEG_PER_RAD
            jac[2 * nl + 2 * npt + 1, 5] = lam * DEG_PER_RAD
            if base.y_lane is not None:
                jac[2 * nl + 2 * npt + 2, 1] = lam * CM_PER_M
        return res, jac


def total_residual(preselected: PreselectedSet, det_lines, det_points,
                   corr: CorrespondenceSet, pose: CameraPose,
                   intrinsics: Intrinsics,
                   config: ResidualConfig = ResidualConfig(),
                   y_lane=AUTO_LANE_HEIGHT):
    """Total cost and stacked residual vector at a pose.

    With the default ``y_lane``, the lane height is resolved from the
    preselected lanes nearest to the evaluated pose. Pass an explicit float
    (or None to drop the height term) to pin it, e.g. across a whole solve.
    """
    if y_lane is AUTO_LANE_HEIGHT:
        y_lane = nearest_lane_height(preselected.lines, pose.position)
    obj = ReprojectionObjective(preselected, det_lines, det_points, corr,
                                intrinsics, config, y_lane)
    r = obj.residual(pose)
    return float(r @ r), r


def residual_jacobian(preselected: PreselectedSet, det_lines, det_points,
                      corr: CorrespondenceSet, pose: CameraPose,
                      intrinsics: Intrinsics,
                      config: ResidualConfig = ResidualConfig(),
                      y_lane=AUTO_LANE_HEIGHT) -> np.ndarray:
    """Jacobian of the stacked residual w.r.t. (x, y, z, yaw, pitch, roll)."""
    if y_lane is AUTO_LANE_HEIGHT:
        y_lane = nearest_lane_height(preselected.lines, pose.position)
    obj = ReprojectionObjective(preselected, det_lines, det_points, corr,
                                intrinsics, config, y_lane)
    return obj.jacobian(pose)
