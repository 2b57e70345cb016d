import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import yaml
from pydantic import ValidationError
from scipy import ndimage

from app.core.exceptions import ScenarioParseError, ScenarioValidationError
from app.core.geometry import points_in_polygon
from app.core.gridio import parse_rle_rows, pgm_to_occupancy, read_pgm
from app.models.world_models import (
    CollisionEvent,
    Detection,
    FovConfig,
    LidarConfig,
    LidarScan,
    MapSpec,
    Pose,
    Region,
    RobotState,
    ScenarioSpec,
)

logger = logging.getLogger("world")

OMEGA_EPS = 1e-6
EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


# --- Static occupancy grid ---

class OccupancyGrid:
    """Boolean occupancy with row 0 at the origin's y."""

    __slots__ = ("occupied", "resolution", "origin")

    def __init__(self, occupied: np.ndarray, resolution: float, origin: Tuple[float, float] = (0.0, 0.0)):
        self.occupied = np.asarray(occupied, dtype=bool)
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))

    @property
    def width(self) -> int:
        return self.occupied.shape[1]

    @property
    def height(self) -> int:
        return self.occupied.shape[0]

    def world_to_cell(self, x: float, y: float) -> Tuple[int, int]:
        return (
            int(math.floor((x - self.origin[0]) / self.resolution)),
            int(math.floor((y - self.origin[1]) / self.resolution)),
        )

    def cell_center(self, ix: int, iy: int) -> Tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def blocked(self, x: float, y: float) -> bool:
        ix, iy = self.world_to_cell(x, y)
        return not self.in_bounds(ix, iy) or bool(self.occupied[iy, ix])

    def disc_hits_occupied(self, x: float, y: float, radius: float) -> bool:
        """True if the disc overlaps any occupied cell or its centre leaves the grid."""
        cx, cy = self.world_to_cell(x, y)
        if not self.in_bounds(cx, cy):
            return True
        ix0, iy0 = self.world_to_cell(x - radius, y - radius)
        ix1, iy1 = self.world_to_cell(x + radius, y + radius)
        ix0, iy0 = max(ix0, 0), max(iy0, 0)
        ix1, iy1 = min(ix1, self.width - 1), min(iy1, self.height - 1)
        window = self.occupied[iy0:iy1 + 1, ix0:ix1 + 1]
        if not window.any():
            return False
        rows, cols = np.nonzero(window)
        x_lo = self.origin[0] + (cols + ix0) * self.resolution
        y_lo = self.origin[1] + (rows + iy0) * self.resolution
        # distance from disc centre to the closest point of each cell square
        dx = np.maximum(np.maximum(x_lo - x, 0.0), x - (x_lo + self.resolution))
        dy = np.maximum(np.maximum(y_lo - y, 0.0), y - (y_lo + self.resolution))
        return bool(np.any(dx * dx + dy * dy < radius * radius))

    def cells_in_polygon(self, region: Region) -> List[Tuple[int, int]]:
        x_min, y_min, x_max, y_max = region.shape.bounds
        ix0, iy0 = self.world_to_cell(x_min, y_min)
        ix1, iy1 = self.world_to_cell(x_max, y_max)
        ixs = np.arange(max(ix0, 0), min(ix1, self.width - 1) + 1)
        iys = np.arange(max(iy0, 0), min(iy1, self.height - 1) + 1)
        if ixs.size == 0 or iys.size == 0:
            return []
        gx, gy = np.meshgrid(ixs, iys)
        xs = self.origin[0] + (gx + 0.5) * self.resolution
        ys = self.origin[1] + (gy + 0.5) * self.resolution
        inside = points_in_polygon(region.shape, xs, ys)
        # row-major: y outer, x inner
        return [(int(ix), int(iy)) for ix, iy in zip(gx[inside], gy[inside])]


def build_occupancy(spec: MapSpec, base_dir: Optional[Path] = None) -> OccupancyGrid:
    if spec.rows is not None:
        occupied = parse_rle_rows(spec.rows)
    elif spec.pgm is not None:
        pgm_path = Path(spec.pgm)
        if not pgm_path.is_absolute() and base_dir is not None:
            pgm_path = Path(base_dir) / pgm_path
        occupied = pgm_to_occupancy(read_pgm(pgm_path))
    else:
        occupied = np.zeros((spec.height, spec.width), dtype=bool)

    if spec.border:
        occupied[0, :] = occupied[-1, :] = True
        occupied[:, 0] = occupied[:, -1] = True

    grid = OccupancyGrid(occupied, spec.resolution, spec.origin)
    for x0, y0, x1, y1 in spec.walls:
        ix0, iy0 = grid.world_to_cell(min(x0, x1), min(y0, y1))
        ix1, iy1 = grid.world_to_cell(max(x0, x1), max(y0, y1))
        ix0, iy0 = max(ix0, 0), max(iy0, 0)
        ix1, iy1 = min(ix1, grid.width - 1), min(iy1, grid.height - 1)
        if ix0 <= ix1 and iy0 <= iy1:
            grid.occupied[iy0:iy1 + 1, ix0:ix1 + 1] = True
    return grid


# --- Scenario loading ---

def _format_validation_error(err: ValidationError) -> str:
    parts = []
    for item in err.errors():
        loc = ".".join(str(p) for p in item.get("loc", ()))
        parts.append(f"{loc or '<root>'}: {item.get('msg')}")
    return "; ".join(parts)


def parse_scenario(document: dict, base_dir: Optional[Path] = None) -> Tuple[ScenarioSpec, OccupancyGrid]:
    if not isinstance(document, dict):
        raise ScenarioParseError("scenario document must be a mapping")
    try:
        spec = ScenarioSpec.model_validate(document)
    except ValidationError as e:
        raise ScenarioParseError(_format_validation_error(e)) from e
    try:
        grid = build_occupancy(spec.map, base_dir)
    except (OSError, ValueError) as e:
        raise ScenarioParseError(f"map: {e}") from e
    validate_scenario(spec, grid)
    return spec, grid


def load_scenario(path) -> ScenarioSpec:
    """Read, parse and fully validate a scenario document."""
    spec, _ = load_scenario_with_grid(path)
    return spec


def load_scenario_with_grid(path) -> Tuple[ScenarioSpec, OccupancyGrid]:
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ScenarioParseError(f"scenario file not found: {path}") from e
    except yaml.YAMLError as e:
        raise ScenarioParseError(f"{path}: {e}") from e
    spec, grid = parse_scenario(document, base_dir=path.parent)
    logger.info(f"Loaded scenario '{spec.id}' from {path} ({len(spec.pedestrians)} pedestrians, {len(spec.regions)} regions)")
    return spec, grid


def goal_point(spec: ScenarioSpec) -> Tuple[float, float]:
    goal = spec.task.goal
    if goal.region_id is not None:
        return spec.region(goal.region_id).anchor
    return (goal.x, goal.y)


def goal_reached(spec: ScenarioSpec, point: Tuple[float, float]) -> bool:
    """Region goals need the robot centre inside the polygon; point goals use their radius."""
    goal = spec.task.goal
    if goal.region_id is not None:
        return spec.region(goal.region_id).contains(point)
    return math.hypot(point[0] - goal.x, point[1] - goal.y) <= goal.radius


def validate_scenario(spec: ScenarioSpec, grid: OccupancyGrid) -> None:
    region_ids = [r.id for r in spec.regions]
    ped_ids = [p.id for p in spec.pedestrians]
    for kind, ids in (("region", region_ids), ("pedestrian", ped_ids)):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ScenarioValidationError(f"duplicate {kind} ids: {', '.join(dupes)}")

    task = spec.task
    referenced_regions = list(task.forbidden_regions) + list(task.caution_regions)
    if task.goal.region_id is not None:
        referenced_regions.append(task.goal.region_id)
    for rid in referenced_regions:
        if rid not in region_ids:
            raise ScenarioValidationError(f"task references unknown region id '{rid}'")
    referenced_peds = [s.pedestrian_id for s in task.subjects]
    if task.follow_target is not None:
        referenced_peds.append(task.follow_target)
    for pid in referenced_peds:
        if pid not in ped_ids:
            raise ScenarioValidationError(f"task references unknown pedestrian id '{pid}'")

    start = spec.robot.start
    if grid.disc_hits_occupied(start.x, start.y, spec.robot.radius):
        raise ScenarioValidationError(f"robot start ({start.x}, {start.y}) is in collision or off the map")

    free_labels, _ = ndimage.label(~grid.occupied, structure=EIGHT_CONNECTED)
    sx, sy = grid.world_to_cell(start.x, start.y)
    start_label = free_labels[sy, sx]
    if task.goal.region_id is not None:
        goal_cells = grid.cells_in_polygon(spec.region(task.goal.region_id))
    else:
        goal_cells = [grid.world_to_cell(task.goal.x, task.goal.y)]
    reachable = any(
        grid.in_bounds(ix, iy) and free_labels[iy, ix] == start_label for ix, iy in goal_cells
    )
    if not reachable:
        raise ScenarioValidationError("goal is not reachable from the robot start on the static map")


# --- World state ---

class World:
    """One immutable tick of the simulation. step_world returns a new instance."""

    __slots__ = ("scenario", "grid", "robot", "time", "tick", "phase_offsets")

    def __init__(
        self,
        scenario: ScenarioSpec,
        grid: OccupancyGrid,
        robot: RobotState,
        time: float = 0.0,
        tick: int = 0,
        phase_offsets: Optional[Dict[str, float]] = None,
    ):
        self.scenario = scenario
        self.grid = grid
        self.robot = robot
        self.time = time
        self.tick = tick
        self.phase_offsets = dict(phase_offsets or {})

    @classmethod
    def from_scenario(
        cls,
        scenario: ScenarioSpec,
        grid: Optional[OccupancyGrid] = None,
        start: Optional[Pose] = None,
        phase_offsets: Optional[Dict[str, float]] = None,
    ) -> "World":
        if grid is None:
            grid = build_occupancy(scenario.map)
        robot = RobotState(pose=start or scenario.robot.start, radius=scenario.robot.radius)
        return cls(scenario, grid, robot, 0.0, 0, phase_offsets)

    def pedestrian_position(self, ped_id: str) -> Tuple[float, float]:
        ped = self.scenario.pedestrian(ped_id)
        return ped.position_at(max(0.0, self.time - self.phase_offsets.get(ped_id, 0.0)))

    def pedestrian_positions(self) -> Dict[str, Tuple[float, float]]:
        return {
            ped.id: ped.position_at(max(0.0, self.time - self.phase_offsets.get(ped.id, 0.0)))
            for ped in self.scenario.pedestrians
        }

    def pedestrian_finished(self, ped_id: str) -> bool:
        ped = self.scenario.pedestrian(ped_id)
        return self.time >= ped.end_time + self.phase_offsets.get(ped_id, 0.0)


def _clamp(value: float, limit: float) -> float:
    return max(-limit, min(limit, value))


def integrate_unicycle(pose: Pose, v: float, omega: float, dt: float) -> Pose:
    theta = pose.theta
    if abs(omega) > OMEGA_EPS:
        new_theta = theta + omega * dt
        x = pose.x + v / omega * (math.sin(new_theta) - math.sin(theta))
        y = pose.y - v / omega * (math.cos(new_theta) - math.cos(theta))
    else:
        new_theta = theta
        x = pose.x + v * math.cos(theta) * dt
        y = pose.y + v * math.sin(theta) * dt
    return Pose(x=x, y=y, theta=new_theta)


def collisions_at(world: World) -> List[CollisionEvent]:
    robot = world.robot
    px, py = robot.pose.x, robot.pose.y
    events: List[CollisionEvent] = []
    for ped in world.scenario.pedestrians:
        qx, qy = world.pedestrian_position(ped.id)
        if math.hypot(px - qx, py - qy) < robot.radius + ped.radius:
            events.append(CollisionEvent(t=world.time, kind="pedestrian", entity_id=ped.id, position=(px, py)))
    if world.grid.disc_hits_occupied(px, py, robot.radius):
        events.append(CollisionEvent(t=world.time, kind="obstacle", position=(px, py)))
    return events


def step_world(
    world: World,
    command: Tuple[float, float],
    dt: float,
    max_lin_vel: Optional[float] = None,
    max_rot_vel: Optional[float] = None,
) -> Tuple[World, List[CollisionEvent]]:
    """Advance one tick: clamp the command, integrate the robot, move pedestrians, detect contact."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    hw = world.scenario.robot
    lin_cap = hw.max_lin_vel if max_lin_vel is None else min(hw.max_lin_vel, max_lin_vel)
    rot_cap = hw.max_rot_vel if max_rot_vel is None else min(hw.max_rot_vel, max_rot_vel)
    v = _clamp(float(command[0]), lin_cap)
    omega = _clamp(float(command[1]), rot_cap)

    pose = integrate_unicycle(world.robot.pose, v, omega, dt)
    robot = RobotState(pose=pose, v=v, omega=omega, radius=world.robot.radius)
    # rounding keeps sim time on the dt lattice (0.1 + 0.2 == 0.3)
    next_world = World(world.scenario, world.grid, robot, round(world.time + dt, 9), world.tick + 1, world.phase_offsets)
    return next_world, collisions_at(next_world)


# --- Synthetic sensing ---

def _march(grid: OccupancyGrid, px: float, py: float, angles: np.ndarray, max_range: float):
    step = grid.resolution * 0.5
    count = int(math.ceil(max_range / step))
    dists = np.minimum(np.arange(1, count + 1) * step, max_range)
    xs = px + np.cos(angles)[:, None] * dists[None, :]
    ys = py + np.sin(angles)[:, None] * dists[None, :]
    ix = np.floor((xs - grid.origin[0]) / grid.resolution).astype(np.int64)
    iy = np.floor((ys - grid.origin[1]) / grid.resolution).astype(np.int64)
    inside = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    return dists, ix, iy, inside


def sense_lidar(world: World, pose: Pose, config: LidarConfig) -> LidarScan:
    grid = world.grid
    if config.beam_count == 1:
        rel = np.array([config.angle_min])
    else:
        rel = np.linspace(config.angle_min, config.angle_max, config.beam_count)
    angles = pose.theta + rel
    max_range = config.max_range

    dists, ix, iy, inside = _march(grid, pose.x, pose.y, angles, max_range)
    occupied = np.zeros(ix.shape, dtype=bool)
    occupied[inside] = grid.occupied[iy[inside], ix[inside]]
    hit = occupied.any(axis=1)
    ranges = np.where(hit, dists[occupied.argmax(axis=1)], max_range)

    peds = world.scenario.pedestrians
    if peds:
        centers = np.array([world.pedestrian_position(p.id) for p in peds]) - np.array([pose.x, pose.y])
        radii = np.array([p.radius for p in peds])
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        proj = dirs @ centers.T                                   # (beams, peds)
        perp_sq = (centers ** 2).sum(axis=1)[None, :] - proj ** 2
        half_chord_sq = radii[None, :] ** 2 - perp_sq
        inside_disc = (centers ** 2).sum(axis=1) <= radii ** 2
        entry = proj - np.sqrt(np.clip(half_chord_sq, 0.0, None))
        valid = (half_chord_sq >= 0) & ((entry >= 0) | inside_disc[None, :])
        entry = np.where(inside_disc[None, :], 0.0, entry)
        ped_range = np.where(valid, entry, np.inf).min(axis=1)
        ranges = np.minimum(ranges, ped_range)

    ranges = np.clip(ranges, 0.0, max_range)
    return LidarScan(
        beam_count=config.beam_count,
        angle_min=config.angle_min,
        angle_max=config.angle_max,
        max_range=max_range,
        ranges=ranges.tolist(),
    )


def line_of_sight(grid: OccupancyGrid, a: Tuple[float, float], b: Tuple[float, float], end_clearance: float = 0.0) -> bool:
    """Static-map visibility between two points; samples within end_clearance of b are ignored."""
    length = math.hypot(b[0] - a[0], b[1] - a[1])
    span = length - end_clearance
    if span <= 0:
        return True
    step = grid.resolution * 0.5
    ts = np.arange(step, span, step)
    if ts.size == 0:
        return True
    ux, uy = (b[0] - a[0]) / length, (b[1] - a[1]) / length
    ix = np.floor((a[0] + ux * ts - grid.origin[0]) / grid.resolution).astype(np.int64)
    iy = np.floor((a[1] + uy * ts - grid.origin[1]) / grid.resolution).astype(np.int64)
    inside = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    return not bool(grid.occupied[iy[inside], ix[inside]].any())


def sensed_pedestrians(world: World, pose: Pose, max_range: float) -> Dict[str, Tuple[float, float]]:
    """Pedestrians the range sensor can see: within max_range with static line of sight."""
    sensed = {}
    for ped_id, pos in world.pedestrian_positions().items():
        if math.hypot(pos[0] - pose.x, pos[1] - pose.y) <= max_range and line_of_sight(world.grid, pose.xy, pos):
            sensed[ped_id] = pos
    return sensed


def _in_cone(pose: Pose, point: Tuple[float, float], fov: FovConfig) -> Optional[float]:
    dx, dy = point[0] - pose.x, point[1] - pose.y
    distance = math.hypot(dx, dy)
    if distance > fov.range:
        return None
    if fov.fov < 2 * math.pi and distance > 0:
        bearing = math.atan2(dy, dx) - pose.theta
        bearing = math.atan2(math.sin(bearing), math.cos(bearing))
        if abs(bearing) > fov.fov / 2:
            return None
    return distance


def is_visible(world: World, pose: Pose, point: Tuple[float, float], fov_config: FovConfig) -> bool:
    return _in_cone(pose, point, fov_config) is not None and line_of_sight(world.grid, pose.xy, point)


def detect_entities(world: World, pose: Pose, fov_config: FovConfig) -> List[Detection]:
    """Ground-truth detection oracle: visible pedestrians and region anchors, nearest first."""
    detections: List[Detection] = []
    for ped in world.scenario.pedestrians:
        pos = world.pedestrian_position(ped.id)
        distance = _in_cone(pose, pos, fov_config)
        if distance is None or not line_of_sight(world.grid, pose.xy, pos):
            continue
        detections.append(
            Detection(
                entity_id=ped.id,
                class_label=ped.identity,
                position=pos,
                distance=distance,
                kind="pedestrian",
                vulnerable=ped.vulnerable,
            )
        )
    for region in world.scenario.regions:
        anchor = region.anchor
        distance = _in_cone(pose, anchor, fov_config)
        if distance is None or not line_of_sight(world.grid, pose.xy, anchor, end_clearance=world.grid.resolution):
            continue
        detections.append(
            Detection(entity_id=region.id, class_label=region.label, position=anchor, distance=distance, kind="region")
        )
    detections.sort(key=lambda d: (d.distance, d.entity_id))
    return detections


def point_in_region(region: Region, point: Tuple[float, float]) -> bool:
    return region.contains(point)


def regions_containing(regions: Iterable[Region], point: Tuple[float, float]) -> List[str]:
    return [r.id for r in regions if r.contains(point)]
