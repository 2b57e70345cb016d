from enum import Enum
from typing import Annotated, Dict, List, Literal, Optional, Tuple

from pydantic import AfterValidator, BaseModel, Field, field_validator, model_validator

from app.models.costmap_models import LETHAL, SocialEntityAttr
from app.models.sfm_models import SfmParams
from app.models.world_models import GoalSpec


class Mode(str, Enum):
    FOLLOW = "Follow"
    GOAL = "Goal"
    EXPLORE = "Explore"
    IDLE = "Idle"


def _check_param_keys(value: Dict[str, float]) -> Dict[str, float]:
    for key in value:
        if key not in SfmParams.model_fields:
            raise ValueError(f"unknown planner parameter '{key}'")
    return value


ParamUpdates = Annotated[Dict[str, float], AfterValidator(_check_param_keys)]


# ----------------------------
# Slow-loop output
# ----------------------------

class Directive(BaseModel):
    mode: Mode
    param_updates: ParamUpdates = Field(default_factory=dict)
    markers: List[SocialEntityAttr] = Field(default_factory=list)
    goal: Optional[GoalSpec] = None
    issued_at: float = Field(0.0, ge=0, description="Sim time (s) the directive was issued")

    model_config = {"frozen": True, "extra": "forbid"}

    @property
    def follow_marker(self) -> Optional[SocialEntityAttr]:
        for marker in self.markers:
            if marker.band is not None:
                return marker
        return None


class ModulatorConfig(BaseModel):
    decision_period: float = Field(10.0, gt=0, description="Seconds between slow-loop decisions")
    injected_latency: float = Field(0.0, ge=0, description="Sim seconds between issue and application")
    source: Literal["scripted", "replay", "external"] = "scripted"
    synchronous: bool = Field(True, description="False runs decide() on a worker thread")
    rules_path: Optional[str] = Field(None, description="Rule table for the scripted source")
    replay_log: Optional[str] = Field(None, description="Episode report to replay directives from")
    endpoint: Optional[str] = Field(None, description="External reasoning service URL (MODULATOR_URL)")
    timeout: float = Field(15.0, gt=0, description="External request timeout (s)")

    model_config = {"frozen": True, "extra": "forbid"}


class ControlState(BaseModel):
    """What the fast loop acts on. Replaced as a whole when a directive lands."""

    params: SfmParams = Field(default_factory=SfmParams)
    markers: Tuple[SocialEntityAttr, ...] = ()
    goal: Optional[GoalSpec] = None
    mode: Optional[Mode] = None
    seq: int = 0
    params_seq: int = 0
    markers_seq: int = 0
    goal_seq: int = 0

    model_config = {"frozen": True}

    @property
    def consistent(self) -> bool:
        return self.params_seq == self.markers_seq == self.goal_seq == self.seq

    @property
    def follow_marker(self) -> Optional[SocialEntityAttr]:
        for marker in self.markers:
            if marker.band is not None:
                return marker
        return None


class ApplicationEvent(BaseModel):
    seq: int
    issued_at: float
    applied_at: float
    mode: Mode
    params: SfmParams
    directive: Directive


# ----------------------------
# Wire protocol
# ----------------------------

class RobotWire(BaseModel):
    x: float
    y: float
    theta: float
    v: float = 0.0
    omega: float = 0.0


class DetectionWire(BaseModel):
    id: str
    class_label: str
    x: float
    y: float
    distance: float
    kind: Literal["pedestrian", "region"] = "pedestrian"
    vulnerable: bool = False


class ModulatorRequest(BaseModel):
    instruction: str = Field(..., min_length=1)
    robot: RobotWire
    detections: List[DetectionWire] = Field(default_factory=list)
    sim_time: float = Field(0.0, ge=0)

    model_config = {
        "json_schema_extra": {
            "example": {
                "instruction": "Follow the doctor to deliver the utensils you are carrying.",
                "robot": {"x": 3.0, "y": 10.0, "theta": 0.0, "v": 0.0, "omega": 0.0},
                "detections": [
                    {"id": "doctor_1", "class_label": "doctor", "x": 5.0, "y": 10.0, "distance": 2.0, "kind": "pedestrian"}
                ],
                "sim_time": 0.0,
            }
        }
    }


class MarkerWire(BaseModel):
    entity_id: str = Field(..., min_length=1)
    class_label: str = ""
    cost_value: float = Field(..., ge=0, le=LETHAL)
    inflation_radius: float = Field(..., gt=0)
    decay_rate: float = Field(0.0, ge=0)
    d_min: Optional[float] = Field(None, gt=0)
    d_max: Optional[float] = Field(None, gt=0)
    x: Optional[float] = Field(None, description="Optional world position; resolved from detections when absent")
    y: Optional[float] = None

    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def check_band(self):
        if (self.d_min is None) != (self.d_max is None):
            raise ValueError("d_min and d_max must be given together")
        if self.d_min is not None and not self.d_min < self.d_max:
            raise ValueError("d_min must be smaller than d_max")
        if (self.x is None) != (self.y is None):
            raise ValueError("marker position needs both x and y")
        return self


class GoalWire(BaseModel):
    region_id: Optional[str] = None
    x: Optional[float] = None
    y: Optional[float] = None

    model_config = {"extra": "forbid"}


class ModulatorResponse(BaseModel):
    mode: Mode
    param_updates: Dict[str, float] = Field(default_factory=dict)
    markers: List[MarkerWire] = Field(default_factory=list)
    goal: Optional[GoalWire] = None

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {
            "example": {
                "mode": "Follow",
                "param_updates": {"sfm_people_weight": 2.0, "sfm_goal_weight": 0.5},
                "markers": [
                    {
                        "entity_id": "doctor_1",
                        "class_label": "doctor",
                        "cost_value": 120,
                        "inflation_radius": 2.0,
                        "decay_rate": 0.5,
                        "d_min": 1.0,
                        "d_max": 3.0,
                    }
                ],
            }
        },
    }


# ----------------------------
# Scripted rule table
# ----------------------------

class DetectionSelector(BaseModel):
    kind: Literal["pedestrian", "region"]
    label: Optional[str] = Field(None, description="Exact class label to match")
    label_in_instruction: bool = Field(False, description="Match labels mentioned in the instruction")

    model_config = {"extra": "forbid"}


class MarkerTemplate(DetectionSelector):
    cost_value: float = Field(..., ge=0, le=LETHAL)
    inflation_radius: float = Field(..., gt=0)
    decay_rate: float = Field(0.0, ge=0)
    band: Optional[Tuple[float, float]] = None
    required: bool = Field(False, description="Rule only matches when at least one detection binds")
    nearest_only: bool = False
    persist: bool = Field(False, description="Keep markers from the previous directive when unseen")
    vulnerable_scale: float = Field(1.0, ge=1.0, description="Radius/cost multiplier for vulnerable pedestrians")


class GoalTemplate(BaseModel):
    label: Optional[str] = Field(None, description="Region label; None picks a region named in the instruction")
    required: bool = True

    model_config = {"extra": "forbid"}


class RuleSpec(BaseModel):
    name: str
    keywords: List[str] = Field(default_factory=list, description="All must appear (case-insensitive)")
    keywords_any: List[str] = Field(default_factory=list, description="At least one must appear")
    mode: Mode
    params: ParamUpdates = Field(default_factory=dict)
    markers: List[MarkerTemplate] = Field(default_factory=list)
    goal: Optional[GoalTemplate] = None

    model_config = {"extra": "forbid"}


class RuleTable(BaseModel):
    modes: Dict[Mode, Dict[str, float]] = Field(default_factory=dict, description="Base parameter profile per mode")
    rules: List[RuleSpec] = Field(default_factory=list)
    fallback_mode: Mode = Mode.IDLE

    model_config = {"extra": "forbid"}

    @field_validator("modes")
    @classmethod
    def check_profiles(cls, value: Dict[Mode, Dict[str, float]]) -> Dict[Mode, Dict[str, float]]:
        for profile in value.values():
            _check_param_keys(profile)
        return value


class RuleMatch(BaseModel):
    rule_name: str
    mode: Mode
    param_updates: Dict[str, float] = Field(default_factory=dict)
    markers: List[SocialEntityAttr] = Field(default_factory=list)
    goal: Optional[GoalSpec] = None
