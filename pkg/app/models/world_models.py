import math
from bisect import bisect_right
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, PrivateAttr, field_validator, model_validator
from shapely.geometry import Polygon

from app.core.geometry import point_in_polygon, polygon_centroid, polygon_is_simple, wrap_angle


# ----------------------------
# Kinematic state
# ----------------------------

class Pose(BaseModel):
    x: float = Field(0.0, description="World x in meters")
    y: float = Field(0.0, description="World y in meters")
    theta: float = Field(0.0, description="Heading in radians, wrapped to (-pi, pi]")

    model_config = {"frozen": True, "extra": "forbid"}

    @field_validator("theta")
    @classmethod
    def wrap_theta(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("theta must be finite")
        return wrap_angle(value)

    @property
    def xy(self) -> Tuple[float, float]:
        return (self.x, self.y)


class RobotState(BaseModel):
    pose: Pose
    v: float = Field(0.0, description="Linear velocity (m/s)")
    omega: float = Field(0.0, description="Angular velocity (rad/s)")
    radius: float = Field(0.3, gt=0, description="Robot footprint radius (m)")

    model_config = {"frozen": True, "extra": "forbid"}

    @property
    def velocity(self) -> Tuple[float, float]:
        """World-frame velocity vector."""
        return (self.v * math.cos(self.pose.theta), self.v * math.sin(self.pose.theta))


# ----------------------------
# Scenario annotations
# ----------------------------

class TrajectoryPoint(BaseModel):
    t: float = Field(..., ge=0, description="Seconds since episode start")
    x: float
    y: float

    model_config = {"frozen": True}


def _coerce_triplets(value):
    # YAML shorthand: [t, x, y]
    if isinstance(value, list):
        return [
            {"t": item[0], "x": item[1], "y": item[2]} if isinstance(item, (list, tuple)) else item
            for item in value
        ]
    return value


class Pedestrian(BaseModel):
    id: str = Field(..., min_length=1)
    identity: str = Field(..., min_length=1, description="Semantic label, e.g. doctor, patient, worker")
    trajectory: List[TrajectoryPoint] = Field(..., min_length=1)
    radius: float = Field(0.3, gt=0)
    vulnerable: bool = Field(False, description="Children, elderly or patients")

    model_config = {"frozen": True, "extra": "forbid"}

    @field_validator("trajectory", mode="before")
    @classmethod
    def coerce_triplets(cls, value):
        return _coerce_triplets(value)

    @field_validator("trajectory")
    @classmethod
    def check_monotonic(cls, value: List[TrajectoryPoint]) -> List[TrajectoryPoint]:
        for prev, cur in zip(value, value[1:]):
            if cur.t <= prev.t:
                raise ValueError("trajectory timestamps must be strictly increasing")
        return value

    @property
    def end_time(self) -> float:
        return self.trajectory[-1].t

    def position_at(self, t: float) -> Tuple[float, float]:
        """Linear interpolation between annotated waypoints, clamped to the endpoints."""
        points = self.trajectory
        if t <= points[0].t:
            return (points[0].x, points[0].y)
        if t >= points[-1].t:
            return (points[-1].x, points[-1].y)
        idx = bisect_right([p.t for p in points], t) - 1
        a, b = points[idx], points[idx + 1]
        alpha = (t - a.t) / (b.t - a.t)
        return (a.x + alpha * (b.x - a.x), a.y + alpha * (b.y - a.y))


RegionKind = Literal["goal", "forbidden", "caution", "neutral"]


class Region(BaseModel):
    id: str = Field(..., min_length=1, description="Semantic identifier")
    label: Optional[str] = Field(None, description="Class label reported by detections; defaults to id")
    polygon: List[Tuple[float, float]] = Field(..., description="Ordered vertices in meters")
    kind: RegionKind = "neutral"
    severity_weight: float = Field(0.0, ge=0, description="Score points per tick of occupancy")

    model_config = {"frozen": True, "extra": "forbid"}

    _shape: Polygon = PrivateAttr()

    def model_post_init(self, __context) -> None:
        self._shape = Polygon(self.polygon)

    @field_validator("polygon")
    @classmethod
    def check_polygon(cls, value: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
        if len(value) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        if not polygon_is_simple(value):
            raise ValueError("polygon must be simple (non-self-intersecting, non-degenerate)")
        return value

    @model_validator(mode="before")
    @classmethod
    def default_label(cls, data):
        if isinstance(data, dict) and not data.get("label"):
            data = {**data, "label": data.get("id")}
        return data

    @property
    def shape(self) -> Polygon:
        return self._shape

    @property
    def anchor(self) -> Tuple[float, float]:
        return polygon_centroid(self._shape)

    def contains(self, point: Tuple[float, float]) -> bool:
        return point_in_polygon(self._shape, point)


class MapSpec(BaseModel):
    resolution: float = Field(0.1, gt=0, description="Meters per cell")
    origin: Tuple[float, float] = Field((0.0, 0.0), description="World position of the lower-left grid corner")
    rows: Optional[List[str]] = Field(None, description="Run-length rows, top row first ('.' free, '#' occupied)")
    pgm: Optional[str] = Field(None, description="Path to a portable graymap, relative to the scenario file")
    width: Optional[int] = Field(None, gt=0, description="Cells in x when building from walls")
    height: Optional[int] = Field(None, gt=0, description="Cells in y when building from walls")
    border: bool = Field(False, description="Wall off the outermost ring of cells")
    walls: List[Tuple[float, float, float, float]] = Field(
        default_factory=list, description="Occupied rectangles [x0, y0, x1, y1] in meters"
    )

    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def check_source(self):
        sources = [self.rows is not None, self.pgm is not None, self.width is not None or self.height is not None]
        if sum(sources) != 1:
            raise ValueError("map needs exactly one of: rows, pgm, width+height")
        if (self.width is None) != (self.height is None):
            raise ValueError("width and height must be given together")
        return self


class RobotSpec(BaseModel):
    start: Pose
    radius: float = Field(0.3, gt=0)
    max_lin_vel: float = Field(1.0, ge=0, description="Hardware linear speed cap (m/s)")
    max_rot_vel: float = Field(1.5, ge=0, description="Hardware turn rate cap (rad/s)")

    model_config = {"extra": "forbid"}


class GoalSpec(BaseModel):
    region_id: Optional[str] = None
    x: Optional[float] = None
    y: Optional[float] = None
    radius: float = Field(0.5, gt=0, description="Arrival tolerance for point goals (m)")

    model_config = {"frozen": True, "extra": "forbid"}

    @model_validator(mode="after")
    def check_point_or_region(self):
        has_point = self.x is not None and self.y is not None
        if (self.x is None) != (self.y is None):
            raise ValueError("goal point needs both x and y")
        if has_point == (self.region_id is not None):
            raise ValueError("goal must be either a point {x, y} or a {region_id}")
        return self


class SubjectRule(BaseModel):
    pedestrian_id: str
    mode: Literal["follow_band", "keep_away"]

    model_config = {"frozen": True, "extra": "forbid"}


class TaskRules(BaseModel):
    archetype: str = Field("goal", description="Task family label (follow, reach, avoid, hurry, careful, ...)")
    goal: GoalSpec
    time_limit: float = Field(60.0, gt=0, description="Seconds of sim time")
    forbidden_regions: List[str] = Field(default_factory=list, description="Hard constraints: any tick inside fails")
    caution_regions: List[str] = Field(default_factory=list, description="Scored by the region metric only")
    follow_target: Optional[str] = None
    band: Tuple[float, float] = Field((1.0, 3.0), description="Follow band [d_min, d_max] in meters")
    subjects: List[SubjectRule] = Field(default_factory=list)

    model_config = {"extra": "forbid"}

    @field_validator("band")
    @classmethod
    def check_band(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not 0 < value[0] < value[1]:
            raise ValueError("band must satisfy 0 < d_min < d_max")
        return value

    @property
    def scored_regions(self) -> List[str]:
        return list(dict.fromkeys(self.forbidden_regions + self.caution_regions))


class InstructionChange(BaseModel):
    t: float = Field(..., ge=0)
    instruction: str = Field(..., min_length=1)

    model_config = {"frozen": True, "extra": "forbid"}


class ScenarioSpec(BaseModel):
    id: str = Field(..., min_length=1)
    instruction: str = Field(..., min_length=1, description="Natural-language task instruction")
    seed: int = 0
    map: MapSpec
    regions: List[Region] = Field(default_factory=list)
    pedestrians: List[Pedestrian] = Field(default_factory=list)
    robot: RobotSpec
    task: TaskRules
    instruction_schedule: List[InstructionChange] = Field(
        default_factory=list, description="Later user queries; each change re-fires the slow loop"
    )

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {
            "example": {
                "id": "minimal",
                "instruction": "Navigate to the reception desk.",
                "map": {"resolution": 0.1, "width": 50, "height": 50, "border": True},
                "regions": [
                    {"id": "reception_desk", "kind": "goal", "polygon": [[3.5, 3.5], [4.5, 3.5], [4.5, 4.5], [3.5, 4.5]]}
                ],
                "robot": {"start": {"x": 1.0, "y": 1.0, "theta": 0.0}},
                "task": {"archetype": "reach", "goal": {"region_id": "reception_desk"}, "time_limit": 30},
            }
        },
    }

    def region(self, region_id: str) -> Region:
        for region in self.regions:
            if region.id == region_id:
                return region
        raise KeyError(region_id)

    def pedestrian(self, pedestrian_id: str) -> Pedestrian:
        for ped in self.pedestrians:
            if ped.id == pedestrian_id:
                return ped
        raise KeyError(pedestrian_id)


# ----------------------------
# Sensing
# ----------------------------

class LidarConfig(BaseModel):
    beam_count: int = Field(180, ge=1)
    angle_min: float = Field(-math.pi, description="First beam angle relative to the robot heading")
    angle_max: float = Field(math.pi - 2 * math.pi / 180, description="Last beam angle relative to the robot heading")
    max_range: float = Field(8.0, gt=0)

    model_config = {"frozen": True, "extra": "forbid"}


class LidarScan(BaseModel):
    beam_count: int = Field(..., ge=1)
    angle_min: float
    angle_max: float
    max_range: float = Field(..., gt=0)
    ranges: List[float]

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def check_ranges(self):
        if len(self.ranges) != self.beam_count:
            raise ValueError("ranges length must equal beam_count")
        if any(r < 0 or r > self.max_range for r in self.ranges):
            raise ValueError("ranges must lie in [0, max_range]")
        return self

    def beam_angles(self) -> np.ndarray:
        if self.beam_count == 1:
            return np.array([self.angle_min])
        return np.linspace(self.angle_min, self.angle_max, self.beam_count)


class FovConfig(BaseModel):
    fov: float = Field(2 * math.pi / 3, gt=0, le=2 * math.pi, description="Full cone angle (rad)")
    range: float = Field(15.0, gt=0, description="Detection range (m)")

    model_config = {"frozen": True, "extra": "forbid"}


class Detection(BaseModel):
    entity_id: str
    class_label: str
    position: Tuple[float, float]
    distance: float = Field(..., ge=0)
    kind: Literal["pedestrian", "region"]
    vulnerable: bool = False

    model_config = {"frozen": True}


class CollisionEvent(BaseModel):
    t: float
    kind: Literal["pedestrian", "obstacle"]
    entity_id: Optional[str] = None
    position: Tuple[float, float]

    model_config = {"frozen": True}
