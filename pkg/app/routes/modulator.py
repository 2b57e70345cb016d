import logging
from functools import lru_cache

from fastapi import APIRouter, HTTPException

from app.config import RULES_PATH
from app.core.exceptions import ModulatorError
from app.core.modulator import ScriptedModulator, encode_response, load_rule_table, request_detections
from app.models.directive_models import ModulatorRequest, ModulatorResponse
from app.models.error_models import HTTPError
from app.models.world_models import Pose, RobotState

# --- Modulator Route ---
# Serves the scripted rule engine over the reasoning-service wire protocol,
# so an external-source run can point MODULATOR_URL at this app.

logger = logging.getLogger("routes")

router = APIRouter(prefix="/modulator", tags=["modulator"])


@lru_cache(maxsize=1)
def get_scripted_modulator() -> ScriptedModulator:
    return ScriptedModulator(load_rule_table(RULES_PATH))


@router.get("/")
def test():
    return {"message": "Modulator Endpoint", "success": True}


@router.post(
    "/",
    response_model=ModulatorResponse,
    responses={
        503: {
            "model": HTTPError,
            "description": "Rule table could not be loaded",
        }
    },
)
def decide(data: ModulatorRequest) -> ModulatorResponse:
    try:
        modulator = get_scripted_modulator()
    except ModulatorError as e:
        logger.error(f"Rule table unavailable: {e}")
        raise HTTPException(status_code=503, detail=str(e))

    robot = RobotState(
        pose=Pose(x=data.robot.x, y=data.robot.y, theta=data.robot.theta),
        v=data.robot.v,
        omega=data.robot.omega,
    )
    directive = modulator.decide(data.instruction, request_detections(data), robot, [], data.sim_time)
    logger.info(f"Decided {directive.mode.value} for '{data.instruction[:60]}' ({len(directive.markers)} markers)")
    return ModulatorResponse.model_validate(encode_response(directive))
