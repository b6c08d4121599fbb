"""
Per-stage waypoint solver.

The terminal pose is optimized first against the stage's subgoal costs,
then interior waypoints are smoothed against its path costs. Collision
clearance and the workspace box act as hard feasibility filters.
"""
from typing import Callable, List, Optional, Tuple

import numpy as np

from dsl.evaluator import eval_constraint, fd_gradient
from geometry.se3 import GripperCommand, Point3, Pose, Trajectory, Waypoint, interpolate, interpolate_many, perturb_pose
from planner.planner_models import SolveProblem, SolverConfig
from utils.errors import PlanningError, StaleRepresentationError
from utils.logger import get_logger
from utils.seeding import rng_for

logger = get_logger(__name__)

Cost = Callable[[Pose], float]
IterationLog = List[Tuple[int, int, float]]


def _check_resolvable(p: SolveProblem):
    for fn, ctx in p.subgoals + p.paths:
        missing = ctx.missing(fn.expr.rep_names)
        if missing:
            keys = [fn.bindings[name].key for name in missing]
            raise StaleRepresentationError(
                f"stage {p.stage}: constraint '{fn.name}' has no fresh value for {', '.join(keys)}",
                binding_key=keys[0],
            )


def _sum_cost(pairs) -> Cost:
    def cost(pose: Pose) -> float:
        return float(sum(eval_constraint(fn, ctx.with_ee(pose)) for fn, ctx in pairs))
    return cost


def _clamp(pose: Pose, p: SolveProblem) -> Pose:
    t = p.workspace.clamp(pose.position)
    return Pose(pose.rotation, Point3.from_array(t))


def _armijo_step(f: Cost, pose: Pose, value: float, grad: np.ndarray, alpha: float, p: SolveProblem, cfg: SolverConfig):
    """Backtrack from ``alpha``; returns (pose, value, alpha) or None when the step collapses."""
    g2 = float(grad @ grad)
    while alpha >= cfg.min_step:
        candidate = _clamp(perturb_pose(pose, -alpha * grad), p)
        cv = f(candidate)
        if cv <= value - cfg.armijo * alpha * g2:
            return candidate, cv, alpha
        alpha *= cfg.backtrack
    return None


def _gradient_descent(f: Cost, pose: Pose, p: SolveProblem, cfg: SolverConfig, restart: int, log: IterationLog) -> Pose:
    value = f(pose)
    alpha = cfg.initial_step
    for it in range(cfg.max_iterations):
        log.append((restart, it, value))
        if value <= cfg.stop_cost:
            break
        grad = fd_gradient(f, pose)
        if not np.any(grad):
            break
        step = _armijo_step(f, pose, value, grad, alpha, p, cfg)
        if step is None:
            break
        pose, value, alpha = step
        alpha *= cfg.step_growth
    return pose


def _coordinate_restart(f: Cost, pose: Pose, p: SolveProblem, cfg: SolverConfig, restart: int, log: IterationLog) -> Pose:
    """Pattern search over the six tangent coordinates."""
    value = f(pose)
    step = cfg.initial_step
    for it in range(cfg.max_iterations):
        log.append((restart, it, value))
        if value <= cfg.stop_cost or step < cfg.min_step:
            break
        improved = False
        for d in range(6):
            for sign in (1.0, -1.0):
                delta = np.zeros(6)
                delta[d] = sign * step
                candidate = _clamp(perturb_pose(pose, delta), p)
                cv = f(candidate)
                if cv < value:
                    pose, value, improved = candidate, cv, True
                    break
        step = step * cfg.step_growth if improved else step * cfg.backtrack
    return pose


OPTIMIZERS = {
    "gradient_descent": _gradient_descent,
    "coordinate_restart": _coordinate_restart,
}


# ---------------------------------------------------------------------------
# Waypoints
# ---------------------------------------------------------------------------

def _anchor_index(p: SolveProblem) -> int:
    """Index of the last interpolated waypoint target (approach waypoint if any)."""
    n = p.waypoint_count
    return n - 2 if p.approach_height > 0 and n >= 3 else n - 1


def _layout(p: SolveProblem, terminal: Pose) -> List[Pose]:
    n = p.waypoint_count
    anchor = _anchor_index(p)
    poses: List[Optional[Pose]] = [None] * n
    poses[0] = p.start
    poses[-1] = terminal
    if anchor == n - 2:
        raised = terminal.position + np.array([0.0, 0.0, p.approach_height])
        poses[anchor] = Pose(terminal.rotation, Point3.from_array(p.workspace.clamp(raised)))
    for i in range(1, anchor):
        poses[i] = interpolate(p.start, poses[anchor], i / anchor)
    return poses


def densify(poses: List[Pose], factor: int) -> List[Pose]:
    """Insert ``factor - 1`` interpolated samples between consecutive poses."""
    ts = [k / factor for k in range(1, factor)]
    out = [poses[0]]
    for a, b in zip(poses, poses[1:]):
        out.extend(interpolate_many(a, b, ts))
        out.append(b)
    return out


def _path_cost(path: Cost, poses: List[Pose], cfg: SolverConfig) -> float:
    return float(sum(path(q) for q in densify(poses, cfg.densify)))


def _smooth(poses: List[Pose], path: Cost, p: SolveProblem, cfg: SolverConfig) -> List[Pose]:
    free = range(1, _anchor_index(p))
    for _ in range(cfg.smoothing_iterations):
        for i in free:
            mid = 0.5 * (poses[i - 1].position + poses[i + 1].position)

            def local(w: Pose, mid=mid) -> float:
                d = w.position - mid
                return path(w) + cfg.smoothing_weight * float(d @ d)

            value = local(poses[i])
            grad = fd_gradient(local, poses[i])
            if not np.any(grad):
                continue
            step = _armijo_step(local, poses[i], value, grad, cfg.initial_step, p, cfg)
            if step is not None:
                poses[i] = step[0]
    return poses


def _clear_of(position: np.ndarray, p: SolveProblem) -> Optional[str]:
    for object_id, box in p.obstacles:
        if box.distance(position) < p.collision_margin:
            return object_id
    return None


def _lift(poses: List[Pose], p: SolveProblem) -> List[Pose]:
    """Raise interior waypoints above any obstacle box they come within the margin of."""
    for i in range(1, len(poses) - 1):
        position = poses[i].position.copy()
        for _ in range(len(p.obstacles) + 1):
            hit = _clear_of(position, p)
            if hit is None:
                break
            box = dict(p.obstacles)[hit]
            position[2] = box.hi[2] + p.collision_margin
        if position[2] > p.workspace.hi[2]:
            raise PlanningError(f"stage {p.stage}: waypoint {i} cannot clear obstacles inside the workspace")
        poses[i] = Pose(poses[i].rotation, Point3.from_array(position))
    return poses


def solve_stage(p: SolveProblem, cfg: SolverConfig) -> Trajectory:
    """
    Optimize one stage. Restart 0 starts from the current pose, later
    restarts from seeded translation perturbations of it; the trajectory
    with the lowest objective wins, ties going to the earlier restart.
    """
    _check_resolvable(p)
    subgoal = _sum_cost(p.subgoals)
    path = _sum_cost(p.paths)

    def terminal_objective(pose: Pose) -> float:
        return cfg.subgoal_weight * subgoal(pose)

    optimize = OPTIMIZERS[cfg.optimizer]
    label = f" ({p.label})" if p.label else ""
    logger.info(f"Stage {p.stage}{label}: solving {len(p.subgoals)} subgoal and {len(p.paths)} path constraints")

    log: IterationLog = []
    best: Optional[Tuple[float, List[Pose]]] = None
    rejected = 0
    for r in range(cfg.restarts):
        if best is not None and best[0] <= cfg.tolerance:
            break
        start = p.start
        if r > 0:
            offset = rng_for(cfg.seed, "restart", p.stage, p.label, r).normal(0.0, cfg.restart_radius, 3)
            start = Pose(p.start.rotation, Point3.from_array(p.workspace.clamp(p.start.position + offset)))
        terminal = optimize(terminal_objective, start, p, cfg, r, log)
        blocker = _clear_of(terminal.position, p)
        if blocker is not None:
            rejected += 1
            logger.debug(f"Stage {p.stage} restart {r}: terminal pose within {p.collision_margin} m of '{blocker}'")
            continue
        poses = _layout(p, terminal)
        if p.paths and cfg.smoothing_iterations > 0:
            poses = _smooth(poses, path, p, cfg)
        poses = _lift(poses, p)
        objective = terminal_objective(poses[-1])
        if p.paths:
            objective += cfg.path_weight * _path_cost(path, poses, cfg)
        if best is None or objective < best[0]:
            best = (objective, poses)

    if best is None:
        logger.error(f"Stage {p.stage}: every terminal pose violates collision clearance")
        raise PlanningError(f"stage {p.stage}: no restart reached a terminal pose clear of obstacles ({rejected} rejected)")

    objective, poses = best
    terminal_cost = subgoal(poses[-1])
    converged = terminal_cost <= cfg.tolerance
    if not converged:
        logger.warning(f"Stage {p.stage}: unconverged, terminal cost {terminal_cost:.6f} > {cfg.tolerance}")
    waypoints = [Waypoint(q, GripperCommand.HOLD) for q in poses[:-1]] + [Waypoint(poses[-1], p.gripper)]
    return Trajectory(
        waypoints=tuple(waypoints),
        stage_index=p.stage,
        converged=converged,
        terminal_cost=terminal_cost,
        objective=objective,
        iteration_log=tuple(log),
    )
