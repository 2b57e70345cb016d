import math

import numpy as np
import pytest

from app.core.costmap import CostmapStack, apply_social_entities, merge_layers
from app.core.exceptions import ParameterValidationError, UnknownParameterError
from app.core.sfm import (
    apply_param_update,
    band_force,
    combine_forces,
    compute_desired_force,
    compute_obstacle_force,
    compute_social_force,
    force_to_cmd,
    plan_global_path,
)
from app.core.world import integrate_unicycle
from app.models.costmap_models import LETHAL, SocialEntityAttr
from app.models.sfm_models import AgentState, SfmParams
from app.models.world_models import Pose, Region, RobotState

DEFAULTS = SfmParams()


def robot(x=10.05, y=10.05, theta=0.0, v=0.0):
    return RobotState(pose=Pose(x=x, y=y, theta=theta), v=v)


# --- desired force ---

def test_desired_force_from_rest():
    params = DEFAULTS.model_copy(update={"desired_speed": 1.0})
    force = compute_desired_force(robot(), (15.0, 10.05), params)
    assert force == pytest.approx([2.0, 0.0])


def test_desired_force_vanishes_at_desired_speed():
    params = DEFAULTS.model_copy(update={"desired_speed": 1.0})
    force = compute_desired_force(robot(v=1.0), (15.0, 10.05), params)
    assert force == pytest.approx([0.0, 0.0])


def test_zero_goal_weight_gives_no_desired_force():
    params = DEFAULTS.model_copy(update={"sfm_goal_weight": 0.0})
    assert compute_desired_force(robot(), (15.0, 10.05), params) == pytest.approx([0.0, 0.0])


def test_coincident_waypoint_gives_no_desired_force():
    assert compute_desired_force(robot(), (10.05, 10.05), DEFAULTS) == pytest.approx([0.0, 0.0])


def test_non_finite_waypoint_is_rejected():
    with pytest.raises(ValueError):
        compute_desired_force(robot(), (math.inf, 0.0), DEFAULTS)


# --- obstacle force ---

@pytest.fixture
def stack():
    return CostmapStack(0.1, 200, 200)


def test_empty_costmap_gives_no_obstacle_force(stack):
    assert compute_obstacle_force(robot(), stack, DEFAULTS) == pytest.approx([0.0, 0.0])


def test_single_cell_behind_pushes_forward(stack):
    stack.layers["obstacle"][100, 90] = LETHAL
    merge_layers(stack)
    fx, fy = compute_obstacle_force(robot(), stack, DEFAULTS)
    assert fx == pytest.approx(2.0 * math.exp((0.3 - 1.0) / 0.35))
    assert fy == pytest.approx(0.0, abs=1e-12)


def test_symmetric_walls_cancel_sideways(stack):
    stack.layers["static"][90, :] = LETHAL
    stack.layers["static"][110, :] = LETHAL
    merge_layers(stack)
    fx, fy = compute_obstacle_force(robot(), stack, DEFAULTS)
    assert abs(fx) < 1e-9
    assert abs(fy) < 1e-9


def test_social_markers_do_not_repel_as_obstacles(stack):
    apply_social_entities(
        stack,
        [SocialEntityAttr(entity_id="m", cost_value=LETHAL, inflation_radius=1.0, position=(9.05, 10.05))],
    )
    merge_layers(stack)
    assert compute_obstacle_force(robot(), stack, DEFAULTS) == pytest.approx([0.0, 0.0])


def test_excluded_agent_footprint_is_skipped(stack):
    stack.layers["obstacle"][100, 90] = LETHAL
    merge_layers(stack)
    agent = AgentState(id="p", position=(9.05, 10.05))
    assert compute_obstacle_force(robot(), stack, DEFAULTS, exclude=[agent]) == pytest.approx([0.0, 0.0])


# --- social force ---

def target_at(d):
    return AgentState(id="doctor_1", position=(10.05 + d, 10.05), is_follow_target=True)


def test_target_inside_band_exerts_nothing():
    assert compute_social_force(robot(), [target_at(2.0)], DEFAULTS) == pytest.approx([0.0, 0.0])


def test_target_too_close_pushes_away():
    assert compute_social_force(robot(), [target_at(0.5)], DEFAULTS) == pytest.approx([-1.0, 0.0])


def test_target_too_far_pulls_in():
    assert compute_social_force(robot(), [target_at(4.0)], DEFAULTS) == pytest.approx([1.0, 0.0])


def test_band_force_is_zero_across_the_band_and_continuous_at_edges():
    e = np.array([1.0, 0.0])
    for d in np.linspace(1.0, 3.0, 100):
        assert np.all(band_force(d, e, DEFAULTS) == 0.0)
    assert band_force(1.0 - 1e-9, e, DEFAULTS) == pytest.approx([0.0, 0.0], abs=1e-8)
    assert band_force(3.0 + 1e-9, e, DEFAULTS) == pytest.approx([0.0, 0.0], abs=1e-8)


def test_band_force_grows_linearly_outside_the_band():
    rng = np.random.default_rng(3)
    angles = rng.uniform(-math.pi, math.pi, size=100)
    for d, angle in zip(rng.uniform(0.0, 1.0, size=100), angles):
        e = np.array([math.cos(angle), math.sin(angle)])
        force = band_force(d, e, DEFAULTS)
        assert np.linalg.norm(force) == pytest.approx(DEFAULTS.k_rep * (1.0 - d), abs=1e-9)
        assert np.dot(force, e) <= 0.0
    for d, angle in zip(rng.uniform(3.0, 8.0, size=100), angles):
        e = np.array([math.cos(angle), math.sin(angle)])
        force = band_force(d, e, DEFAULTS)
        assert np.linalg.norm(force) == pytest.approx(DEFAULTS.k_att * (d - 3.0), abs=1e-9)
        assert np.dot(force, e) >= 0.0


def test_bystander_is_repelled_with_exponential_kernel():
    bystander = AgentState(id="p", position=(11.05, 10.05))
    fx, fy = compute_social_force(robot(), [bystander], DEFAULTS)
    assert fx == pytest.approx(-2.0 * math.exp((0.6 - 1.0) / 0.5))
    assert fy == pytest.approx(0.0)


def test_zero_people_weight_silences_social_term():
    params = DEFAULTS.model_copy(update={"sfm_people_weight": 0.0})
    agents = [target_at(0.2), AgentState(id="p", position=(10.5, 10.5))]
    assert np.array_equal(compute_social_force(robot(), agents, params), np.zeros(2))


# --- combine ---

def test_combine_all_zero():
    assert combine_forces((0, 0), (0, 0), (0, 0)).total == (0.0, 0.0)


def test_combine_is_vector_sum():
    assert combine_forces((1, 0), (0, 1), (-1, 0), (0, 0)).total == (0.0, 1.0)


def test_combine_matches_independent_sum():
    rng = np.random.default_rng(7)
    for _ in range(50):
        parts = rng.normal(scale=10.0, size=(4, 2))
        total = combine_forces(*parts).total
        assert total == pytest.approx(tuple(parts.sum(axis=0)), abs=1e-12)


# --- force to command ---

def test_aligned_force_drives_straight():
    v, omega = force_to_cmd((1.0, 0.0), robot(), DEFAULTS, 0.05)
    assert omega == 0.0
    assert v == pytest.approx(0.5)


def test_force_behind_turns_in_place():
    v, omega = force_to_cmd((-1.0, 0.0), robot(), DEFAULTS, 0.05)
    assert v == 0.0
    assert abs(omega) == DEFAULTS.max_rot_vel


def test_idle_limits_stop_the_robot():
    idle = DEFAULTS.model_copy(update={"max_lin_vel": 0.0, "max_rot_vel": 0.0})
    assert force_to_cmd((5.0, 0.2), robot(), idle, 0.05) == (0.0, 0.0)


def test_zero_force_decays_speed():
    v, omega = force_to_cmd((0.0, 0.0), robot(v=0.8), DEFAULTS, 0.05)
    assert v == pytest.approx(0.8 * 0.9)
    assert omega == 0.0


def test_commands_respect_limits_for_random_forces():
    rng = np.random.default_rng(3)
    for _ in range(200):
        force = rng.normal(scale=20.0, size=2)
        state = robot(theta=float(rng.uniform(-3.1, 3.1)), v=float(rng.uniform(0, 1)))
        v, omega = force_to_cmd(force, state, DEFAULTS, 0.05)
        assert 0.0 <= v <= DEFAULTS.max_lin_vel
        assert abs(omega) <= DEFAULTS.max_rot_vel


def test_desired_force_alone_reaches_goal_in_open_space():
    state = robot(x=0.0, y=0.0)
    goal = (5.0, 0.0)
    best = math.inf
    for _ in range(int(30 / 0.05)):
        force = compute_desired_force(state, goal, DEFAULTS)
        v, omega = force_to_cmd(force, state, DEFAULTS, 0.05)
        state = RobotState(pose=integrate_unicycle(state.pose, v, omega, 0.05), v=v, omega=omega)
        best = min(best, math.hypot(goal[0] - state.pose.x, goal[1] - state.pose.y))
    assert best < 0.3


# --- global path ---

def test_empty_map_gives_straight_path():
    stack = CostmapStack(0.1, 50, 50)
    plan = plan_global_path(stack, (0.55, 2.55), (4.55, 2.55))
    assert plan.found
    assert {iy for _, iy in plan.cells} == {25}
    assert len(plan.cells) == 41
    assert plan.waypoints[-1] == (4.55, 2.55)


def test_path_goes_through_wall_opening():
    occupied = np.zeros((50, 50), dtype=bool)
    occupied[:, 25] = True
    occupied[40:45, 25] = False
    stack = CostmapStack.from_occupancy(occupied, 0.1)
    plan = plan_global_path(stack, (1.05, 1.05), (4.05, 1.05))
    assert plan.found
    crossings = [iy for ix, iy in plan.cells if ix == 25]
    assert crossings and all(40 <= iy < 45 for iy in crossings)


def test_enclosed_goal_has_no_path():
    occupied = np.zeros((50, 50), dtype=bool)
    occupied[20:31, 20] = occupied[20:31, 30] = True
    occupied[20, 20:31] = occupied[30, 20:31] = True
    stack = CostmapStack.from_occupancy(occupied, 0.1)
    plan = plan_global_path(stack, (0.55, 0.55), (2.55, 2.55))
    assert not plan.found
    assert plan.waypoints == []


YELLOW = Region(id="yellow_line_1", polygon=[(4.2, 2.2), (5.8, 2.2), (5.8, 3.8), (4.2, 3.8)])


def overlap(cost_value):
    stack = CostmapStack(0.1, 100, 60)
    if cost_value > 0:
        apply_social_entities(
            stack,
            [
                SocialEntityAttr(
                    entity_id="yellow_line_1",
                    cost_value=cost_value,
                    inflation_radius=2.0,
                    decay_rate=1.0,
                    position=YELLOW.anchor,
                )
            ],
        )
    merge_layers(stack)
    plan = plan_global_path(stack, (1.05, 3.05), (9.05, 3.05))
    assert plan.found
    return sum(1 for ix, iy in plan.cells if YELLOW.contains(stack.cell_center(ix, iy)))


def test_marked_region_is_circumvented():
    assert overlap(0) > 0
    assert overlap(200) == 0


def test_region_overlap_never_grows_with_cost():
    counts = [overlap(c) for c in (0, 50, 100, 200)]
    assert counts == sorted(counts, reverse=True)


# --- parameter updates ---

def test_follow_update():
    params = apply_param_update(DEFAULTS, {"sfm_people_weight": 2.0, "sfm_goal_weight": 0.5})
    assert (params.sfm_people_weight, params.sfm_goal_weight) == (2.0, 0.5)
    assert params.desired_speed == DEFAULTS.desired_speed


def test_goal_update():
    assert apply_param_update(DEFAULTS, {"sfm_goal_weight": 1.0}).sfm_goal_weight == 1.0


def test_empty_update_is_identity():
    assert apply_param_update(DEFAULTS, {}) == DEFAULTS


def test_unknown_key_is_named():
    with pytest.raises(UnknownParameterError) as err:
        apply_param_update(DEFAULTS, {"sfm_people_weight": 2.0, "warp_drive": 9.0})
    assert err.value.key == "warp_drive"


def test_band_inversion_is_rejected_atomically():
    with pytest.raises(ParameterValidationError):
        apply_param_update(DEFAULTS, {"sfm_people_weight": 3.0, "d_min": 4.0})
    assert DEFAULTS.sfm_people_weight == 1.0
