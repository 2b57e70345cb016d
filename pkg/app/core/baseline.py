"""
Direct controller: the slow loop's directive is turned into one discrete
(direction, speed) move that is held until the next directive lands. There is
no costmap and no force model in between, so every decision acts on the scene
as it was when the directive was issued.
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np

from app.core.geometry import wrap_angle
from app.models.directive_models import ControlState, Mode
from app.models.sfm_models import DirectAction, SfmParams
from app.models.world_models import Pose, RobotState

logger = logging.getLogger("baseline")

# bearing errors inside this count as straight ahead; larger ones turn in place first
STRAIGHT_DEADBAND = math.radians(15.0)


def _speed_value(level: str, params: SfmParams) -> float:
    if level == "stop":
        return 0.0
    if level == "slow_down":
        return 0.5 * params.desired_speed
    if level == "constant":
        return params.desired_speed
    return params.max_lin_vel


def hold_action(
    control: ControlState, pose: Pose, goal_xy: Tuple[float, float], tolerance: float
) -> DirectAction:
    """Pick the move for a freshly applied directive, from the pose at application time."""
    params = control.params
    if control.mode is None or control.mode == Mode.IDLE:
        return DirectAction(direction="straight", speed="stop", heading=pose.theta)

    anchor: Optional[Tuple[float, float]] = None
    stop_radius = tolerance
    speed = "constant"
    if control.mode == Mode.FOLLOW:
        target = next((m for m in control.markers if m.band is not None), None)
        if target is None:
            return DirectAction(direction="straight", speed="stop", heading=pose.theta)
        anchor = target.position
        d_min, d_max = target.band
        stop_radius = d_min
        d = math.hypot(anchor[0] - pose.x, anchor[1] - pose.y)
        if d < d_min:
            speed = "stop"
        elif d > d_max:
            speed = "speed_up"
    elif control.mode == Mode.GOAL:
        anchor = goal_xy
    else:
        speed = "slow_down"

    if anchor is None:
        heading = pose.theta
    else:
        heading = math.atan2(anchor[1] - pose.y, anchor[0] - pose.x)
    err = wrap_angle(heading - pose.theta)
    if err > STRAIGHT_DEADBAND:
        direction = "left"
    elif err < -STRAIGHT_DEADBAND:
        direction = "right"
    else:
        direction = "straight"
    action = DirectAction(direction=direction, speed=speed, heading=heading, anchor=anchor, stop_radius=stop_radius)
    logger.debug(f"Holding {direction}/{speed} towards {anchor} ({control.mode.value})")
    return action


def direct_command(action: DirectAction, state: RobotState, params: SfmParams) -> Tuple[float, float]:
    """(v, omega) for one tick of a held move: turn onto the held heading, then drive."""
    pose = state.pose
    if action.speed == "stop":
        return 0.0, 0.0
    if action.anchor is not None:
        if math.hypot(action.anchor[0] - pose.x, action.anchor[1] - pose.y) <= action.stop_radius:
            return 0.0, 0.0
    err = wrap_angle(action.heading - pose.theta)
    omega = float(np.clip(params.k_ang * err, -params.max_rot_vel, params.max_rot_vel))
    v = _speed_value(action.speed, params) if abs(err) <= STRAIGHT_DEADBAND else 0.0
    return min(v, params.max_lin_vel), omega
