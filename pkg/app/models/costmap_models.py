from typing import Optional, Tuple

from pydantic import BaseModel, Field, model_validator

LETHAL = 254
INSCRIBED = 253


class SocialEntityAttr(BaseModel):
    """One slow-loop marker turned into a cost field on the social layer."""

    entity_id: str = Field(..., min_length=1)
    class_label: str = Field("", description="Semantic label of the marked entity")
    cost_value: float = Field(..., ge=0, le=LETHAL, description="C_base, peak cost at the entity")
    inflation_radius: float = Field(..., gt=0, description="R, cut-off distance in meters")
    decay_rate: float = Field(0.0, ge=0, description="lambda, exponential decay per meter")
    band: Optional[Tuple[float, float]] = Field(None, description="(d_min, d_max) for follow targets")
    position: Tuple[float, float] = Field(..., description="World position in meters")

    model_config = {
        "frozen": True,
        "extra": "forbid",
        "json_schema_extra": {
            "example": {
                "entity_id": "yellow_line_1",
                "class_label": "yellow_line",
                "cost_value": 200,
                "inflation_radius": 2.0,
                "decay_rate": 1.0,
                "position": [9.0, 10.0],
            }
        },
    }

    @model_validator(mode="after")
    def check_band(self):
        if self.band is not None and not 0 < self.band[0] < self.band[1]:
            raise ValueError("band must satisfy 0 < d_min < d_max")
        return self


class CostmapConfig(BaseModel):
    inflation_radius: Optional[float] = Field(
        None, ge=0, description="Static inflation distance; defaults to the robot radius"
    )
    social_layer_enabled: bool = Field(True, description="False runs the no-social-layer ablation")

    model_config = {"frozen": True, "extra": "forbid"}
