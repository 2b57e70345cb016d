from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

Vector = Tuple[float, float]


class SfmParams(BaseModel):
    """
    Planner parameter vector tuned by the slow loop.
    Keys double as the param_updates vocabulary of the directive wire format.
    """

    force_factor_desired: float = Field(1.0, ge=0)
    force_factor_obstacle: float = Field(1.0, ge=0)
    force_factor_social: float = Field(1.0, ge=0)
    force_factor_group: float = Field(1.0, ge=0)
    sfm_people_weight: float = Field(1.0, ge=0, description="Multiplies the social term")
    sfm_goal_weight: float = Field(1.0, ge=0, description="Multiplies the desired term")
    sfm_obstacle_weight: float = Field(1.0, ge=0, description="Multiplies the obstacle term")
    desired_speed: float = Field(0.8, ge=0, description="m/s")
    relaxation_time: float = Field(0.5, gt=0, description="tau, seconds")
    obstacle_amplitude: float = Field(2.0, ge=0, description="A")
    obstacle_range: float = Field(0.35, gt=0, description="B, meters")
    social_amplitude: float = Field(2.0, ge=0)
    social_range: float = Field(0.5, gt=0, description="meters")
    k_rep: float = Field(2.0, ge=0, description="Band repulsion gain (force per meter)")
    k_att: float = Field(1.0, ge=0, description="Band attraction gain (force per meter)")
    d_min: float = Field(1.0, gt=0, description="Inner band edge (m)")
    d_max: float = Field(3.0, gt=0, description="Outer band edge (m)")
    max_lin_vel: float = Field(1.0, ge=0, description="m/s")
    max_rot_vel: float = Field(1.5, ge=0, description="rad/s")
    k_ang: float = Field(2.0, ge=0, description="Heading gain")
    k_lin: float = Field(0.5, ge=0, description="Speed gain per unit force")

    model_config = {"frozen": True, "extra": "forbid"}

    @model_validator(mode="after")
    def check_band(self):
        if not self.d_min < self.d_max:
            raise ValueError("d_min must be smaller than d_max")
        return self


class ForceBreakdown(BaseModel):
    desired: Vector
    obstacle: Vector
    social: Vector
    group: Vector
    total: Vector

    model_config = {"frozen": True}


class AgentState(BaseModel):
    id: str
    position: Vector
    radius: float = Field(0.3, gt=0)
    is_follow_target: bool = False

    model_config = {"frozen": True}


class PathPlan(BaseModel):
    found: bool
    waypoints: List[Vector] = Field(default_factory=list)
    cells: List[Tuple[int, int]] = Field(default_factory=list, description="Full cell path, start to goal")
    cost: Optional[float] = None

    model_config = {"frozen": True}


class DirectAction(BaseModel):
    """Discrete move held by the direct controller until the next directive lands."""

    direction: Literal["left", "straight", "right"]
    speed: Literal["stop", "slow_down", "constant", "speed_up"]
    heading: float = Field(..., description="World heading to hold (rad)")
    anchor: Optional[Vector] = Field(None, description="Point the move aims at, as seen when the directive was issued")
    stop_radius: float = Field(0.0, ge=0, description="Halt once this close to the anchor (m)")

    model_config = {"frozen": True}
