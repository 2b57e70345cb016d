import hashlib
import json
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator

from app.models.directive_models import ApplicationEvent, Directive
from app.models.world_models import CollisionEvent, ScenarioSpec


class MetricsConfig(BaseModel):
    """Scoring coefficients. The sha256 of this document is stored in every report."""

    below_band_penalty: float = Field(50.0, ge=0, description="Points lost at d = 0 below the follow band")
    above_band_penalty: float = Field(25.0, ge=0, description="Points lost per meter above the follow band")
    d_safe: float = Field(1.5, gt=0, description="keep_away distance that scores 100 (m)")
    region_cap: float = Field(100.0, ge=0, description="Max contribution of one region to the region penalty")
    band_threshold: float = Field(0.8, ge=0, le=1, description="Min post-acquisition band fraction for follow success")
    strict_collisions: bool = Field(False, description="Collision fails the episode")
    merge_distance: float = Field(0.01, ge=0, description="Segments shorter than this merge before curvature (m)")

    model_config = {"frozen": True, "extra": "forbid"}

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class TrajectorySample(BaseModel):
    t: float
    x: float
    y: float
    theta: float

    model_config = {"frozen": True}


class Trajectory(BaseModel):
    samples: List[TrajectorySample] = Field(default_factory=list)

    @field_validator("samples")
    @classmethod
    def check_order(cls, value: List[TrajectorySample]) -> List[TrajectorySample]:
        for prev, cur in zip(value, value[1:]):
            if not cur.t > prev.t:
                raise ValueError("trajectory timestamps must be strictly increasing")
        return value


class TickRecord(BaseModel):
    """One row of the fast loop, recorded after the world step."""

    tick: int = Field(..., ge=1)
    t: float
    x: float
    y: float
    theta: float
    v: float
    omega: float
    regions: List[str] = Field(default_factory=list, description="Ids of regions containing the robot centre")
    collisions: int = Field(0, ge=0, description="Collision events this tick")
    subject_distances: Dict[str, float] = Field(default_factory=dict)
    target_distance: Optional[float] = None
    target_visible: bool = False
    mode: Optional[str] = None
    pedestrians: Dict[str, Tuple[float, float]] = Field(default_factory=dict)


class LatencySample(BaseModel):
    component: Literal["slow_decide", "fast_step", "global_plan"]
    ms: float = Field(..., ge=0)
    t: float


class LatencyStats(BaseModel):
    count: int
    mean: float
    p50: float
    p95: float
    max: float


FailureReason = Literal["semantic_violation", "timeout", "band_violation", "collision"]


class Outcome(BaseModel):
    success: bool
    reason: Optional[FailureReason] = None
    collided: bool = False
    goal_reached: bool = False
    forbidden_ticks: int = 0
    band_fraction: Optional[float] = None


class MetricValues(BaseModel):
    success: bool
    collision: bool
    smoothness: Optional[float] = Field(None, description="Cumulative absolute heading change (rad), lower is smoother")
    smoothness_score: Optional[float] = Field(None, description="100 / (1 + smoothness)")
    subject_score: Optional[float] = None
    region_score: Optional[float] = None


class EpisodeReport(BaseModel):
    scenario: ScenarioSpec
    repetition: int = 0
    seed: int
    dt: float
    latency: float = Field(0.0, description="Injected slow-loop latency (s)")
    social_layer_enabled: bool = True
    controller: str = Field("sfm", description="Fast-loop controller: sfm or direct")
    map_extent: Tuple[float, float, float, float] = Field(..., description="x0, y0, x1, y1 in meters")
    start: Optional[TrajectorySample] = Field(None, description="Robot pose before the first tick")
    tick_count: int = Field(..., ge=0, description="Ticks run; replay rejects logs with fewer rows")
    ticks: List[TickRecord] = Field(default_factory=list)
    collisions: List[CollisionEvent] = Field(default_factory=list)
    issued: List[Directive] = Field(default_factory=list, description="Every directive the slow loop returned")
    applied: List[ApplicationEvent] = Field(default_factory=list, description="Applied-parameter log")
    latency_log: List[LatencySample] = Field(default_factory=list)
    outcome: Optional[Outcome] = None
    metrics: Optional[MetricValues] = None
    metrics_config_hash: str = ""

    @property
    def trajectory(self) -> Trajectory:
        samples = [TrajectorySample(t=r.t, x=r.x, y=r.y, theta=r.theta) for r in self.ticks]
        if self.start is not None:
            samples.insert(0, self.start)
        return Trajectory(samples=samples)


class ReplayResult(BaseModel):
    metrics: MetricValues
    outcome: Outcome
    matches: Optional[bool] = Field(None, description="Recomputed metrics equal the logged ones; None for csv input")
    config_mismatch: bool = Field(False, description="Log was scored under a different metrics config")
