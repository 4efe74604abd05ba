"""Damped least-squares (Levenberg-Marquardt) minimizer over the 6-DOF pose.

The normal equations are damped with the diagonal of J^T J (Marquardt
scaling) so that meter and radian parameters are conditioned alike. Steps
are accepted only when the cost decreases, which makes the accepted-cost
sequence monotone and the returned cost never worse than the initial one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .camera import POSE_PARAMS, CameraPose, wrap_angle


class SingularNormalEquations(RuntimeError):
    """Damped normal equations unsolvable even at maximum damping;
    the constraint geometry is degenerate."""


class TerminationReason(Enum):
    STEP_TOLERANCE = "step_tolerance"
    COST_TOLERANCE = "cost_tolerance"
    MAX_ITERATIONS = "max_iterations"
    MAX_DAMPING = "max_damping"


@dataclass(frozen=True)
class SolverConfig:
    initial_damping: float = 1e-3
    damping_up: float = 10.0     # multiplied in on a rejected step
    damping_down: float = 10.0   # divided out on an accepted step
    max_iterations: int = 100
    step_tolerance: float = 1e-8      # norm of the mixed m/rad update
    cost_tolerance: float = 1e-10     # relative decrease per accepted step
    max_damping: float = 1e10

    def __post_init__(self):
        if min(self.initial_damping, self.step_tolerance, self.cost_tolerance,
               self.max_damping) <= 0 or self.max_iterations <= 0:
            raise ValueError("solver settings must be positive")
        if self.damping_up <= 1.0 or self.damping_down <= 1.0:
            raise ValueError("damping factors must exceed 1")


@dataclass
class SolveResult:
    pose: CameraPose
    final_cost: float
    residual_rms: float  # sqrt of the total cost, the quantity gates compare
    iterations: int
    converged: bool
    termination_reason: TerminationReason
    cost_trace: list = field(default_factory=list)  # accepted costs, init first


def _wrap_vector(v: np.ndarray) -> np.ndarray:
    out = v.copy()
    for i in (3, 4, 5):
        out[i] = wrap_angle(out[i])
    return out


def solve(objective, init: CameraPose,
          config: SolverConfig = SolverConfig()) -> SolveResult:
    """Minimize the objective's squared residual norm starting from ``init``.

    ``objective`` must provide residual(pose) and jacobian(pose); a combined
    residual_and_jacobian(pose) is used when available. Deterministic: the
    same inputs produce the same iterate sequence.
    """
    combined = getattr(objective, "residual_and_jacobian", None)

    def evaluate(pose):
        if combined is not None:
            return combined(pose)
        return objective.residual(pose), objective.jacobian(pose)

    x = init.as_vector()
    pose = init
    r = np.asarray(objective.residual(pose), dtype=float)
    cost = float(r @ r)
    trace = [cost]
    damping = config.initial_damping
    iterations = 0
    reason = TerminationReason.MAX_ITERATIONS

    for iterations in range(1, config.max_iterations + 1):
        r, jac = evaluate(pose)
        r = np.asarray(r, dtype=float)
        jac = np.asarray(jac, dtype=float)
        jtj = jac.T @ jac
        gradient = jac.T @ r
        diag = np.clip(np.diag(jtj), 1e-12, None)

        accepted = False
        while True:
            try:
                step = np.linalg.solve(jtj + damping * np.diag(diag), -gradient)
                solvable = bool(np.all(np.isfinite(step)))
            except np.linalg.LinAlgError:
                solvable = False
            if not solvable:
                damping *= config.damping_up
                if damping > config.max_damping:
                    raise SingularNormalEquations(
                        "normal equations unsolvable at maximum damping")
                continue
            if float(np.linalg.norm(step)) < config.step_tolerance:
                return SolveResult(pose, cost, math.sqrt(cost), iterations,
                                   True, TerminationReason.STEP_TOLERANCE, trace)
            candidate_vec = _wrap_vector(x + step)
            candidate = CameraPose.from_vector(candidate_vec)
            r_new = np.asarray(objective.residual(candidate), dtype=float)
            new_cost = float(r_new @ r_new)
            if math.isfinite(new_cost) and new_cost < cost:
                relative_drop = (cost - new_cost) / max(cost, 1e-300)
                x, pose, cost = candidate_vec, candidate, new_cost
                trace.append(cost)
                damping = max(damping / config.damping_down, 1e-15)
                accepted = True
                if relative_drop < config.cost_tolerance:
                    return SolveResult(pose, cost, math.sqrt(cost), iterations,
                                       True, TerminationReason.COST_TOLERANCE,
                                       trace)
                break
            damping *= config.damping_up
            if damping > config.max_damping:
                return SolveResult(pose, cost, math.sqrt(cost), iterations,
                                   False, TerminationReason.MAX_DAMPING, trace)
        if not accepted:  # pragma: no cover - loop above always resolves
            break

    return SolveResult(pose, cost, math.sqrt(cost), config.max_iterations,
                       False, reason, trace)


def _param_index(dim) -> int:
    if isinstance(dim, str):
        try:
            return POSE_PARAMS.index(dim)
        except ValueError:
            raise ValueError(
                f"unknown pose parameter {dim!r}, expected one of {POSE_PARAMS}"
            ) from None
    idx = int(dim)
    if not 0 <= idx < 6:
        raise ValueError("pose parameter index out of range")
    return idx


def cost_landscape(objective, center: CameraPose, dim_a, dim_b,
                   half_range_a: float, half_range_b: float, grid_n: int):
    """Evaluate sqrt(cost) over a regular 2D grid of pose perturbations.

    The two selected parameters (name or index) sweep +-half_range around
    the center pose; the other four stay fixed. Returns (a_values,
    b_values, grid) with grid[i, j] at a_values[i], b_values[j].
    """
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    ia, ib = _param_index(dim_a), _param_index(dim_b)
    if ia == ib:
        raise ValueError("landscape dimensions must differ")
    base = center.as_vector()
    a_values = base[ia] + np.linspace(-half_range_a, half_range_a, grid_n)
    b_values = base[ib] + np.linspace(-half_range_b, half_range_b, grid_n)
    grid = np.empty((grid_n, grid_n))
    for i, a in enumerate(a_values):
        for j, b in enumerate(b_values):
            vec = base.copy()
            vec[ia] = a
            vec[ib] = b
            r = objective.residual(CameraPose.from_vector(vec))
            grid[i, j] = math.sqrt(float(r @ r))
    return a_values, b_values, grid
