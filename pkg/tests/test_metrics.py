import itertools
import math

import numpy as np
import pytest

from app.config import METRICS_PATH
from app.core.metrics import (
    aggregate_task,
    band_fraction,
    compute_metrics,
    curvature_smoothness,
    evaluate_episode,
    format_cell,
    latency_stats,
    load_metrics_config,
    region_score,
    smoothness_score,
    subject_score,
    wrap,
)
from app.core.world import parse_scenario
from app.models.metrics_models import (
    EpisodeReport,
    LatencySample,
    MetricsConfig,
    MetricValues,
    TickRecord,
    Trajectory,
    TrajectorySample,
)
from app.models.world_models import SubjectRule


def trajectory(points):
    return Trajectory(samples=[TrajectorySample(t=0.1 * (i + 1), x=x, y=y, theta=0.0) for i, (x, y) in enumerate(points)])


def tick(i, x, y, regions=(), subjects=None, target=None, visible=False, collisions=0):
    return TickRecord(
        tick=i + 1,
        t=0.05 * (i + 1),
        x=x,
        y=y,
        theta=0.0,
        v=0.5,
        omega=0.0,
        regions=list(regions),
        collisions=collisions,
        subject_distances=subjects or {},
        target_distance=target,
        target_visible=visible,
    )


def report(spec, ticks):
    return EpisodeReport(
        scenario=spec, seed=0, dt=0.05, map_extent=(0.0, 0.0, 10.0, 10.0), tick_count=len(ticks), ticks=ticks
    )


def walk_to_desk(n=20, regions=()):
    """Straight walk ending inside the reception desk region."""
    xs = np.linspace(2.0, 8.0, n)
    return [tick(i, float(x), 5.0, regions=regions, subjects={"patient_1": 3.0}) for i, x in enumerate(xs)]


@pytest.fixture
def follow_spec(open_room_doc):
    open_room_doc["task"].update(
        {"archetype": "follow", "follow_target": "doctor_1", "forbidden_regions": [], "subjects": [
            {"pedestrian_id": "doctor_1", "mode": "follow_band"}
        ]}
    )
    return parse_scenario(open_room_doc)[0]


# --- wrap ---

def test_wrap_examples():
    assert wrap(math.pi / 2) == pytest.approx(math.pi / 2)
    assert wrap(3 * math.pi) == pytest.approx(math.pi)
    assert wrap(-3.5 * math.pi) == pytest.approx(0.5 * math.pi)
    assert wrap(-math.pi) == math.pi


def test_wrap_is_periodic_and_in_range():
    rng = np.random.default_rng(11)
    for x in rng.uniform(-3.0, 3.0, size=100):
        for k in (-3, -1, 1, 4):
            shifted = wrap(x + 2 * math.pi * k)
            assert -math.pi < shifted <= math.pi
            assert shifted == pytest.approx(wrap(x), abs=1e-9)


# --- smoothness ---

def test_collinear_path_is_perfectly_smooth():
    assert curvature_smoothness(trajectory([(0, 0), (1, 1), (2, 2), (3, 3)])) == 0.0


def test_quarter_turns_add_up():
    assert curvature_smoothness(trajectory([(0, 0), (1, 0), (1, 1), (0, 1)])) == pytest.approx(math.pi)


def test_square_loop_has_three_right_angles():
    square = [(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]
    assert curvature_smoothness(trajectory(square)) == pytest.approx(1.5 * math.pi, abs=1e-9)


def test_turn_across_the_branch_cut_is_short():
    a, b = math.radians(170), math.radians(-170)
    p1 = (math.cos(a), math.sin(a))
    p2 = (p1[0] + math.cos(b), p1[1] + math.sin(b))
    assert curvature_smoothness(trajectory([(0, 0), p1, p2])) == pytest.approx(math.radians(20))


def test_fewer_than_three_samples_is_undefined():
    assert curvature_smoothness(trajectory([(0, 0), (1, 0)])) is None
    assert smoothness_score(None) is None


def test_tiny_segments_are_merged():
    wobble = [(0, 0), (1, 0), (1.001, 0.004), (1.002, -0.003), (2, 0)]
    assert curvature_smoothness(trajectory(wobble)) == pytest.approx(0.0, abs=1e-9)


def test_stationary_robot_scores_zero_turn():
    assert curvature_smoothness(trajectory([(1, 1)] * 5)) == 0.0


def test_start_pose_counts_toward_smoothness(open_room):
    spec, _ = open_room
    ticks = [tick(0, 1.0, 0.0), tick(1, 1.0, 1.0)]
    without_start = report(spec, ticks)
    with_start = without_start.model_copy(update={"start": TrajectorySample(t=0.0, x=0.0, y=0.0, theta=0.0)})
    assert curvature_smoothness(without_start.trajectory) is None
    assert curvature_smoothness(with_start.trajectory) == pytest.approx(math.pi / 2)
    assert with_start.trajectory.samples[0].t == 0.0


def test_smoothness_ignores_rigid_motion():
    rng = np.random.default_rng(5)
    points = np.cumsum(rng.normal(size=(30, 2)), axis=0)
    angle = 1.234
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    moved = points @ rot.T + np.array([40.0, -7.0])
    base = curvature_smoothness(trajectory(points.tolist()))
    assert base > 0
    assert curvature_smoothness(trajectory(moved.tolist())) == pytest.approx(base, abs=1e-9)


def test_smoothness_score_is_normalized():
    assert smoothness_score(0.0) == 100.0
    assert smoothness_score(1.0) == 50.0


# --- subject score ---

def test_all_ticks_in_band_score_full(follow_spec, metrics_config):
    rows = [tick(i, 1.0, 1.0, subjects={"doctor_1": 2.0}) for i in range(10)]
    assert subject_score(report(follow_spec, rows), follow_spec.task.subjects, metrics_config) == 100.0


def test_two_meters_beyond_band_scores_fifty(follow_spec, metrics_config):
    rows = [tick(i, 1.0, 1.0, subjects={"doctor_1": 5.0}) for i in range(10)]
    assert subject_score(report(follow_spec, rows), follow_spec.task.subjects, metrics_config) == pytest.approx(50.0)


def test_below_band_and_keep_away_shapes(follow_spec, metrics_config):
    rows = [tick(0, 1.0, 1.0, subjects={"doctor_1": 0.5}), tick(1, 1.0, 1.0, subjects={"doctor_1": 0.0})]
    rep = report(follow_spec, rows)
    assert subject_score(rep, follow_spec.task.subjects, metrics_config) == pytest.approx((75.0 + 50.0) / 2)
    keep = [SubjectRule(pedestrian_id="doctor_1", mode="keep_away")]
    assert subject_score(rep, keep, metrics_config) == pytest.approx((100 * 0.5 / 1.5 + 0.0) / 2)


def test_subjects_are_averaged_unweighted(open_room, metrics_config):
    spec, _ = open_room
    rules = [SubjectRule(pedestrian_id="patient_1", mode="keep_away"), SubjectRule(pedestrian_id="doctor_1", mode="keep_away")]
    rows = [tick(i, 1.0, 1.0, subjects={"patient_1": 3.0, "doctor_1": 0.75}) for i in range(4)]
    assert subject_score(report(spec, rows), rules, metrics_config) == pytest.approx(75.0)


def test_no_subjects_is_absent(open_room, metrics_config):
    spec, _ = open_room
    assert subject_score(report(spec, walk_to_desk()), [], metrics_config) is None


def test_far_beyond_band_is_clamped_at_zero(follow_spec, metrics_config):
    rows = [tick(0, 1.0, 1.0, subjects={"doctor_1": 40.0})]
    assert subject_score(report(follow_spec, rows), follow_spec.task.subjects, metrics_config) == 0.0


# --- region score ---

def test_region_untouched_scores_full(open_room, metrics_config):
    spec, _ = open_room
    assert region_score(report(spec, walk_to_desk()), ["yellow_line_1"], metrics_config) == 100.0


def test_every_tick_in_severity_fifty_region(open_room, metrics_config):
    spec, _ = open_room
    rows = walk_to_desk(regions=["yellow_line_1"])
    assert region_score(report(spec, rows), ["yellow_line_1"], metrics_config) == pytest.approx(50.0)


def test_region_penalty_is_capped(open_room_doc, metrics_config):
    open_room_doc["regions"][1]["severity_weight"] = 300
    spec, _ = parse_scenario(open_room_doc)
    rows = walk_to_desk(regions=["yellow_line_1"])
    assert region_score(report(spec, rows), ["yellow_line_1"], metrics_config) == 0.0


def test_no_rule_regions_is_absent(open_room, metrics_config):
    spec, _ = open_room
    assert region_score(report(spec, walk_to_desk()), [], metrics_config) is None


# --- outcome ---

def test_goal_reached_cleanly_is_success(open_room, metrics_config):
    spec, _ = open_room
    outcome = evaluate_episode(report(spec, walk_to_desk()), spec.task, metrics_config)
    assert outcome.success
    assert outcome.reason is None
    assert outcome.goal_reached


def test_crossing_forbidden_region_fails(open_room, metrics_config):
    spec, _ = open_room
    rows = walk_to_desk()
    rows[5] = rows[5].model_copy(update={"regions": ["yellow_line_1"]})
    outcome = evaluate_episode(report(spec, rows), spec.task, metrics_config)
    assert not outcome.success
    assert outcome.reason == "semantic_violation"
    assert outcome.forbidden_ticks == 1


def test_stopping_short_is_timeout(open_room, metrics_config):
    spec, _ = open_room
    rows = [tick(i, 2.0 + 0.1 * i, 5.0) for i in range(10)]
    outcome = evaluate_episode(report(spec, rows), spec.task, metrics_config)
    assert outcome.reason == "timeout"


def test_arriving_after_the_limit_is_timeout(open_room, metrics_config):
    spec, _ = open_room
    rows = walk_to_desk()
    rows[-1] = rows[-1].model_copy(update={"t": 31.0})
    assert evaluate_episode(report(spec, rows), spec.task, metrics_config).reason == "timeout"


def test_collisions_are_counted_but_do_not_fail_by_default(open_room):
    spec, _ = open_room
    rows = walk_to_desk()
    rows[3] = rows[3].model_copy(update={"collisions": 1})
    rep = report(spec, rows)
    relaxed = evaluate_episode(rep, spec.task, MetricsConfig())
    assert relaxed.success and relaxed.collided
    strict = evaluate_episode(rep, spec.task, MetricsConfig(strict_collisions=True))
    assert strict.reason == "collision"


def follow_rows(distances):
    xs = np.linspace(2.0, 8.0, len(distances))
    return [
        tick(i, float(x), 5.0, subjects={"doctor_1": d}, target=d, visible=True)
        for i, (x, d) in enumerate(zip(xs, distances))
    ]


def test_band_kept_is_follow_success(follow_spec, metrics_config):
    outcome = evaluate_episode(report(follow_spec, follow_rows([2.0] * 9 + [3.5])), follow_spec.task, metrics_config)
    assert outcome.success
    assert outcome.band_fraction == pytest.approx(0.9)


def test_band_lost_is_follow_failure(follow_spec, metrics_config):
    outcome = evaluate_episode(report(follow_spec, follow_rows([2.0] * 5 + [4.0] * 5)), follow_spec.task, metrics_config)
    assert outcome.reason == "band_violation"


def test_band_counted_from_first_sighting(follow_spec):
    rows = follow_rows([6.0, 6.0, 2.0, 2.0])
    rows[0] = rows[0].model_copy(update={"target_visible": False})
    rows[1] = rows[1].model_copy(update={"target_visible": False})
    assert band_fraction(report(follow_spec, rows), (1.0, 3.0)) == 1.0


def test_compute_metrics_bundles_all_values(open_room, metrics_config):
    spec, _ = open_room
    outcome, values = compute_metrics(report(spec, walk_to_desk()), metrics_config)
    assert values.success is outcome.success is True
    assert values.collision is False
    assert values.smoothness == 0.0
    assert values.smoothness_score == 100.0
    assert values.subject_score == 100.0
    assert values.region_score == 100.0


# --- latency ---

def samples(component, values):
    return [LatencySample(component=component, ms=v, t=0.05 * i) for i, v in enumerate(values)]


def test_constant_latency():
    assert latency_stats(samples("fast_step", [5.0] * 10))["fast_step"].mean == 5.0


def test_latency_statistics_per_component():
    stats = latency_stats(samples("slow_decide", [1.0, 3.0]) + samples("fast_step", [2.0, 4.0, 6.0, 8.0]))
    assert stats["slow_decide"].mean == 2.0
    assert stats["fast_step"].p50 == 5.0
    assert stats["fast_step"].max == 8.0
    assert stats["fast_step"].count == 4


def test_empty_latency_log_is_absent():
    assert latency_stats([]) is None


# --- aggregation ---

def values(success, collision=False, smoothness=1.0, subject=None, region=None):
    return MetricValues(
        success=success,
        collision=collision,
        smoothness=smoothness,
        smoothness_score=smoothness_score(smoothness),
        subject_score=subject,
        region_score=region,
    )


def test_all_successes_rate_hundred():
    assert aggregate_task([values(True)] * 5)["success_rate"] == 100.0


def test_three_of_five():
    row = aggregate_task([values(True)] * 3 + [values(False, collision=True)] * 2)
    assert row["success_rate"] == 60.0
    assert row["collision_rate"] == 40.0
    assert format_cell(row["success_rate"]) == "60.00"


def test_text_cells_pass_through():
    assert format_cell("follow_doctor") == "follow_doctor"


def test_unscored_columns_render_none():
    row = aggregate_task([values(True)] * 2)
    assert row["subject_score"] is None
    assert format_cell(row["subject_score"]) == "none"


def test_aggregation_ignores_episode_order():
    runs = [
        values(True, smoothness=0.1, subject=90.0, region=100.0),
        values(False, collision=True, smoothness=2.7, subject=40.0, region=50.0),
        values(True, smoothness=0.3, subject=77.7, region=100.0),
        values(True, smoothness=1.1, subject=12.3, region=95.5),
    ]
    reference = aggregate_task(runs)
    for perm in itertools.permutations(runs):
        assert aggregate_task(list(perm)) == reference


def test_empty_task_aggregates_to_none():
    row = aggregate_task([])
    assert row["episodes"] == 0
    assert row["success_rate"] is None


def test_format_cell():
    assert format_cell(True) == "true"
    assert format_cell(3) == "3"
    assert format_cell(2.5) == "2.50"
    assert format_cell(0.5) == "0.50"


# --- config ---

def test_bundled_config_matches_defaults():
    assert load_metrics_config(METRICS_PATH) == MetricsConfig()


def test_config_hash_tracks_coefficients():
    assert MetricsConfig().config_hash() == MetricsConfig().config_hash()
    assert MetricsConfig(d_safe=2.0).config_hash() != MetricsConfig().config_hash()
