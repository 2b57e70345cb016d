import logging
import math
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from app.core.costmap import CostmapStack
from app.core.exceptions import ParameterValidationError, UnknownParameterError
from app.core.geometry import wrap_angle
from app.models.costmap_models import INSCRIBED, LETHAL
from app.models.sfm_models import AgentState, ForceBreakdown, PathPlan, SfmParams
from app.models.world_models import RobotState

logger = logging.getLogger("sfm")

ZERO = np.zeros(2)
COINCIDENT_EPS = 1e-6
ZERO_FORCE_EPS = 1e-9
OBSTACLE_RANGE_FACTOR = 5.0
PATH_COST_SCALE = 64.0
WAYPOINT_SPACING = 0.5

NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


# --- Force terms ---

def compute_desired_force(state: RobotState, waypoint: Optional[Sequence[float]], params: SfmParams) -> np.ndarray:
    if waypoint is None:
        return ZERO.copy()
    to_goal = np.array([waypoint[0] - state.pose.x, waypoint[1] - state.pose.y], dtype=float)
    if not np.all(np.isfinite(to_goal)):
        raise ValueError("waypoint must be finite")
    dist = math.hypot(to_goal[0], to_goal[1])
    if dist < COINCIDENT_EPS:
        return ZERO.copy()
    e_goal = to_goal / dist
    velocity = np.array(state.velocity)
    gain = params.sfm_goal_weight * params.force_factor_desired
    return gain * (params.desired_speed * e_goal - velocity) / params.relaxation_time


def _excluded(xs: np.ndarray, ys: np.ndarray, exclude: Sequence[AgentState], margin: float) -> np.ndarray:
    mask = np.zeros(xs.shape, dtype=bool)
    for agent in exclude:
        ax, ay = agent.position
        mask |= np.hypot(xs - ax, ys - ay) <= agent.radius + margin
    return mask


def compute_obstacle_force(
    state: RobotState,
    stack: CostmapStack,
    params: SfmParams,
    exclude: Sequence[AgentState] = (),
) -> np.ndarray:
    """Exponential repulsion from lethal static/scan cells near the robot."""
    gain = params.sfm_obstacle_weight * params.force_factor_obstacle
    if gain == 0.0:
        return ZERO.copy()
    px, py = state.pose.x, state.pose.y
    reach = params.obstacle_range * OBSTACLE_RANGE_FACTOR
    win = stack.window(px, py, reach)
    if win is None:
        return ZERO.copy()
    rows, cols = win
    lethal = stack.physical[rows, cols] >= LETHAL
    if not lethal.any():
        return ZERO.copy()

    cx, cy = stack.cell_centers(rows, cols)
    xs = np.broadcast_to(cx, lethal.shape)[lethal]
    ys = np.broadcast_to(cy, lethal.shape)[lethal]
    if exclude:
        # agent footprints are handled by the social term
        keep = ~_excluded(xs, ys, exclude, stack.resolution)
        xs, ys = xs[keep], ys[keep]
    dx, dy = px - xs, py - ys
    d = np.hypot(dx, dy)
    near = (d <= reach) & (d > 0)
    if not near.any():
        return ZERO.copy()
    d, dx, dy = d[near], dx[near], dy[near]
    mag = params.obstacle_amplitude * np.exp((state.radius - d) / params.obstacle_range)
    force = np.array([np.sum(mag * dx / d), np.sum(mag * dy / d)])
    return gain * force


def band_force(d: float, e_target: np.ndarray, params: SfmParams) -> np.ndarray:
    """Hinge force: push away inside d_min, pull in beyond d_max, nothing inside the band."""
    repel = params.k_rep * max(params.d_min - d, 0.0)
    attract = params.k_att * max(d - params.d_max, 0.0)
    return repel * (-e_target) + attract * e_target


def compute_social_force(state: RobotState, agents: Sequence[AgentState], params: SfmParams) -> np.ndarray:
    gain = params.sfm_people_weight * params.force_factor_social
    if gain == 0.0 or not agents:
        return ZERO.copy()
    px, py = state.pose.x, state.pose.y
    force = np.zeros(2)
    for agent in agents:
        offset = np.array([agent.position[0] - px, agent.position[1] - py])
        d = math.hypot(offset[0], offset[1])
        if d < COINCIDENT_EPS:
            continue
        e_agent = offset / d
        if agent.is_follow_target:
            force = force + band_force(d, e_agent, params)
        else:
            mag = params.social_amplitude * math.exp((state.radius + agent.radius - d) / params.social_range)
            force = force - mag * e_agent
    return gain * force


def combine_forces(
    desired: Sequence[float],
    obstacle: Sequence[float],
    social: Sequence[float],
    group: Optional[Sequence[float]] = None,
) -> ForceBreakdown:
    group = (0.0, 0.0) if group is None else group
    parts = [tuple(float(c) for c in vec) for vec in (desired, obstacle, social, group)]
    total = (
        parts[0][0] + parts[1][0] + parts[2][0] + parts[3][0],
        parts[0][1] + parts[1][1] + parts[2][1] + parts[3][1],
    )
    return ForceBreakdown(desired=parts[0], obstacle=parts[1], social=parts[2], group=parts[3], total=total)


def force_to_cmd(force: Sequence[float], state: RobotState, params: SfmParams, dt: float) -> Tuple[float, float]:
    """Heading controller: turn toward the force, drive along it only when roughly facing it."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    fx, fy = float(force[0]), float(force[1])
    magnitude = math.hypot(fx, fy)
    if magnitude < ZERO_FORCE_EPS:
        decay = max(0.0, 1.0 - dt / params.relaxation_time)
        v = max(0.0, min(state.v * decay, params.max_lin_vel))
        return v, 0.0
    heading_error = wrap_angle(math.atan2(fy, fx) - state.pose.theta)
    omega = max(-params.max_rot_vel, min(params.max_rot_vel, params.k_ang * heading_error))
    v = params.k_lin * magnitude * max(0.0, math.cos(heading_error))
    v = max(0.0, min(v, params.max_lin_vel))
    return v, omega


# --- Global path ---

def _shift(n: int, delta: int) -> Tuple[slice, slice]:
    """Source/destination slices along one axis for a neighbour offset."""
    if delta >= 0:
        return slice(0, n - delta), slice(delta, n)
    return slice(-delta, n), slice(0, n + delta)


def _grid_graph(passable: np.ndarray, step_factor: np.ndarray, resolution: float) -> csr_matrix:
    h, w = passable.shape
    idx = np.arange(h * w).reshape(h, w)
    srcs, dsts, weights = [], [], []
    for dy, dx in NEIGHBOURS:
        ys, yd = _shift(h, dy)
        xs, xd = _shift(w, dx)
        ok = passable[ys, xs] & passable[yd, xd]
        if dx != 0 and dy != 0:
            # no squeezing diagonally between two blocked cells
            ok &= passable[ys, xd] & passable[yd, xs]
        length = math.hypot(dx, dy) * resolution
        srcs.append(idx[ys, xs][ok])
        dsts.append(idx[yd, xd][ok])
        weights.append(length * step_factor[yd, xd][ok])
    return csr_matrix(
        (np.concatenate(weights), (np.concatenate(srcs), np.concatenate(dsts))),
        shape=(h * w, h * w),
    )


def decimate_path(stack: CostmapStack, cells, goal: Sequence[float], spacing: float = WAYPOINT_SPACING):
    every = max(1, int(round(spacing / stack.resolution)))
    waypoints = [stack.cell_center(ix, iy) for ix, iy in cells[every::every]]
    while waypoints and math.hypot(waypoints[-1][0] - goal[0], waypoints[-1][1] - goal[1]) < spacing / 2:
        waypoints.pop()
    waypoints.append((float(goal[0]), float(goal[1])))
    return waypoints


def plan_global_path(stack: CostmapStack, start: Sequence[float], goal: Sequence[float]) -> PathPlan:
    """Cheapest 8-connected path over the master grid; step cost = length * (1 + cost/64)."""
    sx, sy = stack.world_to_cell(start[0], start[1])
    gx, gy = stack.world_to_cell(goal[0], goal[1])
    if not (stack.in_bounds(sx, sy) and stack.in_bounds(gx, gy)):
        logger.warning(f"Path request outside costmap: {tuple(start)} -> {tuple(goal)}")
        return PathPlan(found=False)

    passable = stack.master < INSCRIBED
    if not passable[gy, gx]:
        logger.warning(f"Goal cell ({gx}, {gy}) is lethal; no path")
        return PathPlan(found=False)
    # the robot may stand on a freshly marked cell
    passable[sy, sx] = True

    step_factor = 1.0 + stack.master.astype(np.float64) / PATH_COST_SCALE
    graph = _grid_graph(passable, step_factor, stack.resolution)
    start_idx = sy * stack.width + sx
    goal_idx = gy * stack.width + gx
    dist, pred = dijkstra(graph, directed=True, indices=start_idx, return_predecessors=True)
    if not np.isfinite(dist[goal_idx]):
        logger.warning(f"No path from {tuple(start)} to {tuple(goal)}")
        return PathPlan(found=False)

    cells = []
    node = goal_idx
    while node != start_idx and node >= 0:
        cells.append((int(node % stack.width), int(node // stack.width)))
        node = pred[node]
    cells.append((sx, sy))
    cells.reverse()
    return PathPlan(
        found=True,
        waypoints=decimate_path(stack, cells, goal),
        cells=cells,
        cost=float(dist[goal_idx]),
    )


# --- Parameter updates ---

def apply_param_update(params: SfmParams, updates: Mapping[str, float]) -> SfmParams:
    """Replace listed fields and re-validate; on any error the original params stand."""
    for key in updates:
        if key not in SfmParams.model_fields:
            raise UnknownParameterError(key)
    if not updates:
        return params
    try:
        return SfmParams.model_validate({**params.model_dump(), **dict(updates)})
    except ValidationError as e:
        detail = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'params'}: {err['msg']}" for err in e.errors())
        raise ParameterValidationError(detail) from e
