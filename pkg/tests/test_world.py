import math

import numpy as np
import pytest

from app.config import scenario_path
from app.core.exceptions import ScenarioParseError, ScenarioValidationError
from app.core.world import (
    World,
    detect_entities,
    goal_reached,
    load_scenario,
    parse_scenario,
    point_in_region,
    sense_lidar,
    step_world,
)
from app.models.world_models import FovConfig, LidarConfig, Pedestrian, Pose, Region

BEAM_AHEAD = LidarConfig(beam_count=1, angle_min=0.0, angle_max=0.0, max_range=8.0)


def free_space(pedestrians=(), walls=(), theta=0.0):
    """10 m x 10 m unbordered map centred on the origin, robot at (0, 0)."""
    doc = {
        "id": "free_space",
        "instruction": "Navigate to the point.",
        "map": {"resolution": 0.1, "origin": [-5.0, -5.0], "width": 100, "height": 100, "walls": list(walls)},
        "pedestrians": list(pedestrians),
        "robot": {"start": {"x": 0.0, "y": 0.0, "theta": theta}},
        "task": {"goal": {"x": -3.0, "y": 0.0}},
    }
    spec, grid = parse_scenario(doc)
    return World.from_scenario(spec, grid)


def standing(ped_id, x, y, identity="visitor"):
    return {"id": ped_id, "identity": identity, "trajectory": [[0.0, x, y]]}


# --- load_scenario ---

def test_minimal_scenario_has_no_pedestrians():
    spec = load_scenario(scenario_path("minimal"))
    assert spec.pedestrians == []
    assert spec.task.goal.region_id == "reception_desk"


def test_follow_scenario_carries_identity_and_band():
    spec = load_scenario(scenario_path("follow_doctor"))
    assert spec.pedestrian("doctor_1").identity == "doctor"
    assert spec.task.follow_target == "doctor_1"
    assert spec.task.band == (1.0, 3.0)


def test_unknown_region_reference_is_rejected(open_room_doc):
    open_room_doc["task"]["forbidden_regions"] = ["nowhere"]
    with pytest.raises(ScenarioValidationError, match="nowhere"):
        parse_scenario(open_room_doc)


def test_unknown_follow_target_is_rejected(open_room_doc):
    open_room_doc["task"]["follow_target"] = "nurse_9"
    with pytest.raises(ScenarioValidationError, match="nurse_9"):
        parse_scenario(open_room_doc)


def test_start_in_collision_is_rejected(open_room_doc):
    open_room_doc["map"]["walls"] = [[1.0, 4.5, 2.0, 5.5]]
    with pytest.raises(ScenarioValidationError, match="collision"):
        parse_scenario(open_room_doc)


def test_unreachable_goal_is_rejected(open_room_doc):
    # a full-height wall between start and desk
    open_room_doc["map"]["walls"] = [[5.5, 0.0, 5.8, 10.0]]
    with pytest.raises(ScenarioValidationError, match="reachable"):
        parse_scenario(open_room_doc)


def test_malformed_polygon_is_a_parse_error(open_room_doc):
    open_room_doc["regions"][0]["polygon"] = [[0, 0], [1, 1], [1, 0], [0, 1]]
    with pytest.raises(ScenarioParseError, match="simple"):
        parse_scenario(open_room_doc)


def test_missing_file_is_a_parse_error(tmp_path):
    with pytest.raises(ScenarioParseError):
        load_scenario(tmp_path / "absent.yaml")


def test_run_length_rows_are_read_bottom_up(open_room_doc):
    open_room_doc["map"] = {"resolution": 1.0, "rows": ["10.", "#9."] + ["10."] * 8}
    spec, grid = parse_scenario(open_room_doc)
    # second row from the top is row 8 from the origin
    assert grid.occupied[8, 0]
    assert not grid.occupied[0, 0]


# --- pedestrians ---

def test_pedestrian_hits_annotated_waypoints_exactly():
    ped = Pedestrian(id="p", identity="doctor", trajectory=[[0.0, 1.0, 1.0], [2.0, 3.0, 1.0], [4.0, 3.0, 5.0]])
    assert ped.position_at(2.0) == (3.0, 1.0)
    assert ped.position_at(3.0) == pytest.approx((3.0, 3.0))
    assert ped.position_at(-1.0) == (1.0, 1.0)
    assert ped.position_at(10.0) == (3.0, 5.0)


def test_pedestrian_timestamps_must_increase():
    with pytest.raises(ValueError):
        Pedestrian(id="p", identity="doctor", trajectory=[[0.0, 1.0, 1.0], [0.0, 2.0, 1.0]])


# --- step_world ---

def test_zero_command_leaves_pose_unchanged():
    world = free_space()
    nxt, events = step_world(world, (0.0, 0.0), 0.1)
    assert nxt.robot.pose == world.robot.pose
    assert events == []
    assert nxt.time == pytest.approx(0.1)
    assert nxt.tick == 1


def test_straight_line_step():
    nxt, _ = step_world(free_space(), (1.0, 0.0), 0.1)
    assert (nxt.robot.pose.x, nxt.robot.pose.y, nxt.robot.pose.theta) == pytest.approx((0.1, 0.0, 0.0))


def test_arc_step_matches_closed_form():
    nxt, _ = step_world(free_space(), (1.0, 1.0), 0.5)
    assert nxt.robot.pose.x == pytest.approx(math.sin(0.5))
    assert nxt.robot.pose.y == pytest.approx(1.0 - math.cos(0.5))
    assert nxt.robot.pose.theta == pytest.approx(0.5)


def test_command_is_clamped_to_hardware_limits():
    nxt, _ = step_world(free_space(), (5.0, -9.0), 0.1)
    assert nxt.robot.v == 1.0
    assert nxt.robot.omega == -1.5


def test_theta_stays_wrapped():
    world = free_space(theta=3.1)
    for _ in range(20):
        world, _ = step_world(world, (0.0, 1.5), 0.1)
        assert -math.pi < world.robot.pose.theta <= math.pi


def test_non_positive_dt_is_rejected():
    with pytest.raises(ValueError):
        step_world(free_space(), (0.0, 0.0), 0.0)


def test_disc_overlap_emits_pedestrian_collision():
    world = free_space(pedestrians=[standing("p1", 0.55, 0.0)])
    _, events = step_world(world, (0.0, 0.0), 0.05)
    assert [(e.kind, e.entity_id) for e in events] == [("pedestrian", "p1")]


def test_touching_discs_do_not_collide():
    world = free_space(pedestrians=[standing("p1", 0.6, 0.0)])
    _, events = step_world(world, (0.0, 0.0), 0.05)
    assert events == []


def test_stepping_is_deterministic():
    commands = [(0.8, 0.3), (1.0, -0.7), (0.2, 1.4)] * 10

    def run():
        world = free_space()
        poses = []
        for cmd in commands:
            world, _ = step_world(world, cmd, 0.05)
            poses.append(world.robot.pose)
        return poses

    assert run() == run()


# --- sense_lidar ---

def test_empty_map_reads_max_range():
    scan = sense_lidar(free_space(), Pose(), LidarConfig(beam_count=36))
    assert scan.ranges == [8.0] * 36


def test_wall_ahead_is_within_half_a_cell():
    world = free_space(walls=[[2.05, -1.0, 2.09, 1.0]])
    scan = sense_lidar(world, world.robot.pose, BEAM_AHEAD)
    assert scan.ranges[0] == pytest.approx(2.0, abs=0.05 + 1e-9)


def test_beam_through_pedestrian_centre_stops_at_disc():
    world = free_space(pedestrians=[standing("p1", 3.0, 0.0)])
    scan = sense_lidar(world, world.robot.pose, BEAM_AHEAD)
    assert scan.ranges[0] == pytest.approx(2.7)


def test_default_scan_covers_full_circle():
    scan = sense_lidar(free_space(), Pose(), LidarConfig())
    assert scan.beam_count == 180
    angles = scan.beam_angles()
    assert angles[0] == pytest.approx(-math.pi)
    assert np.diff(angles) == pytest.approx(np.full(179, 2 * math.pi / 180))


# --- detect_entities ---

def test_pedestrian_behind_is_outside_cone():
    world = free_space(pedestrians=[standing("p1", -2.0, 0.0)])
    assert detect_entities(world, world.robot.pose, FovConfig(fov=math.pi)) == []


def test_doctor_ahead_is_detected_with_label_and_distance():
    world = free_space(pedestrians=[standing("doctor_1", 4.0, 0.0, identity="doctor")])
    (det,) = detect_entities(world, world.robot.pose, FovConfig())
    assert det.class_label == "doctor"
    assert det.kind == "pedestrian"
    assert det.distance == pytest.approx(4.0)


def test_pedestrian_behind_wall_is_occluded():
    world = free_space(pedestrians=[standing("p1", 4.0, 0.0)], walls=[[2.0, -1.0, 2.2, 1.0]])
    assert detect_entities(world, world.robot.pose, FovConfig()) == []


def test_detections_include_region_anchors_nearest_first(open_world):
    detections = detect_entities(open_world, open_world.robot.pose, FovConfig(fov=2 * math.pi))
    distances = [d.distance for d in detections]
    assert distances == sorted(distances)
    regions = {d.entity_id: d for d in detections if d.kind == "region"}
    assert regions["reception_desk"].position == pytest.approx((8.0, 5.0))
    assert regions["yellow_line_1"].class_label == "yellow_line"
    assert {d.entity_id for d in detections if d.vulnerable} == {"patient_1"}


# --- regions ---

UNIT_SQUARE = Region(id="sq", polygon=[(0, 0), (1, 0), (1, 1), (0, 1)])
L_SHAPE = Region(id="ell", polygon=[(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)])


def test_point_in_unit_square():
    assert point_in_region(UNIT_SQUARE, (0.5, 0.5))
    assert not point_in_region(UNIT_SQUARE, (2.0, 2.0))


def test_boundary_points_count_as_inside():
    assert point_in_region(UNIT_SQUARE, (1.0, 0.5))
    assert point_in_region(UNIT_SQUARE, (0.0, 0.0))


def test_l_shape_notch_is_outside():
    assert not point_in_region(L_SHAPE, (1.5, 1.5))
    assert point_in_region(L_SHAPE, (0.5, 1.5))


def test_l_shape_matches_raster_oracle():
    xs = np.linspace(-0.45, 2.45, 30)
    for x in xs:
        for y in xs:
            expected = (0 <= x <= 2 and 0 <= y <= 1) or (0 <= x <= 1 and 0 <= y <= 2)
            assert point_in_region(L_SHAPE, (x, y)) == expected


def test_l_shape_anchor_is_area_centroid():
    # three unit squares centred at (0.5, 0.5), (1.5, 0.5) and (0.5, 1.5)
    assert L_SHAPE.anchor == pytest.approx((5.0 / 6.0, 5.0 / 6.0))


@pytest.mark.parametrize(
    "polygon",
    [
        [(0, 0), (1, 1), (1, 0), (0, 1)],
        [(0, 0), (1, 0), (2, 0)],
        [(0, 0), (2, 0), (2, 2), (1, 0), (0, 2)],
    ],
    ids=["bowtie", "collinear", "touching"],
)
def test_non_simple_polygons_are_rejected(polygon):
    with pytest.raises(ValueError):
        Region(id="bad", polygon=polygon)


def test_polygon_cells_agree_with_point_containment(open_room):
    _, grid = open_room
    cells = grid.cells_in_polygon(L_SHAPE)
    assert cells
    expected = [
        (ix, iy)
        for iy in range(grid.height)
        for ix in range(grid.width)
        if point_in_region(L_SHAPE, grid.cell_center(ix, iy))
    ]
    assert cells == expected


def test_goal_reached_for_region_and_point_goals(open_room):
    spec, _ = open_room
    assert goal_reached(spec, (8.0, 5.0))
    assert not goal_reached(spec, (6.0, 5.0))
    point_spec = load_scenario(scenario_path("follow_doctor"))
    assert goal_reached(point_spec, (7.0, 10.0))
    assert not goal_reached(point_spec, (6.0, 10.0))
