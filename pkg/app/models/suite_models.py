from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator

from app.models.costmap_models import CostmapConfig
from app.models.directive_models import ModulatorConfig
from app.models.metrics_models import LatencyStats, MetricsConfig, MetricValues, Outcome
from app.models.world_models import FovConfig, LidarConfig


class FastLoopConfig(BaseModel):
    dt: float = Field(0.05, gt=0, description="Fast-loop tick (s)")
    replan_period: float = Field(1.0, gt=0, description="Global path refresh period (s)")
    lookahead: float = Field(0.6, gt=0, description="Path waypoint lookahead distance (m)")
    waypoint_tolerance: float = Field(0.3, gt=0, description="Waypoint reached / follow deadband (m)")
    association_gate: float = Field(1.0, gt=0, description="Max jump for re-anchoring a marker onto a pedestrian (m)")
    start_jitter: float = Field(0.3, ge=0, description="Start position jitter half-width (m)")
    heading_jitter_deg: float = Field(15.0, ge=0, description="Start heading jitter half-width (deg)")
    phase_jitter: float = Field(1.0, ge=0, description="Pedestrian start delay upper bound (s)")
    lidar: LidarConfig = Field(default_factory=LidarConfig)
    fov: FovConfig = Field(default_factory=FovConfig)
    costmap: CostmapConfig = Field(default_factory=CostmapConfig)
    controller: Literal["sfm", "direct"] = Field(
        "sfm", description="sfm: costmap and social forces; direct: hold each directive's discrete move"
    )

    model_config = {"frozen": True, "extra": "forbid"}


class SuiteConfig(BaseModel):
    name: str = "suite"
    scenarios: List[str] = Field(..., description="Scenario files, relative to the suite file")
    repetitions: int = Field(5, ge=1)
    seed_base: int = 0
    modulator: ModulatorConfig = Field(default_factory=ModulatorConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)
    fast_loop: FastLoopConfig = Field(default_factory=FastLoopConfig)
    output_dir: Optional[str] = None
    workers: int = Field(1, ge=1, description="Episodes run in parallel")

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {
            "example": {
                "name": "acceptance",
                "scenarios": ["../scenarios/follow_doctor.yaml", "../scenarios/careful_lines.yaml"],
                "repetitions": 5,
                "seed_base": 7,
                "modulator": {"source": "scripted", "injected_latency": 0.0},
            }
        },
    }

    @field_validator("scenarios")
    @classmethod
    def check_scenarios(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("suite needs at least one scenario")
        return value


class EpisodeRow(BaseModel):
    """One line of the per-episode log kept next to the results table."""

    scenario_id: str
    archetype: str
    repetition: int
    seed: int
    error: Optional[str] = None
    outcome: Optional[Outcome] = None
    metrics: Optional[MetricValues] = None


class TaskRow(BaseModel):
    task: str
    episodes: int
    failed_runs: int = 0
    success_rate: Optional[float] = None
    collision_rate: Optional[float] = None
    smoothness: Optional[float] = None
    smoothness_score: Optional[float] = None
    subject_score: Optional[float] = None
    region_score: Optional[float] = None


class BatchResult(BaseModel):
    suite: str
    rows: List[TaskRow]
    episodes: List[EpisodeRow]
    latency: Dict[str, Dict[str, LatencyStats]] = Field(default_factory=dict)


# ----------------------------
# HTTP route models
# ----------------------------

class EpisodeRequest(BaseModel):
    scenario: str = Field(..., description="Bundled scenario name, e.g. follow_doctor")
    seed: int = 0
    injected_latency: float = Field(0.0, ge=0, description="Seconds")
    social_layer_enabled: bool = True
    controller: Literal["sfm", "direct"] = Field("sfm", description="direct holds each directive's discrete move")

    model_config = {
        "json_schema_extra": {
            "example": {
                "scenario": "follow_doctor",
                "seed": 3,
                "injected_latency": 0.0,
                "social_layer_enabled": True,
                "controller": "sfm",
            }
        }
    }


class EpisodeSummary(BaseModel):
    success: bool
    scenario_id: str
    seed: int
    ticks: int
    outcome: Outcome
    metrics: MetricValues
    applied_modes: List[str] = Field(default_factory=list)


class BatchRequest(BaseModel):
    scenarios: List[str] = Field(..., min_length=1, description="Bundled scenario names")
    repetitions: int = Field(5, ge=1, le=20)
    seed_base: int = 0
    injected_latency: float = Field(0.0, ge=0)


class BatchSummary(BaseModel):
    success: bool
    rows: List[TaskRow]
