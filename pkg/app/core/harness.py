import hashlib
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from matplotlib.figure import Figure
from matplotlib.patches import Polygon as PolygonPatch
from matplotlib.patches import Rectangle
from pydantic import ValidationError

from app.config import METRICS_PATH, MODULATOR_TIMEOUT, MODULATOR_URL, OUTPUT_DIR, RULES_PATH
from app.core.baseline import direct_command, hold_action
from app.core.costmap import CostmapStack, apply_social_entities, merge_layers, update_obstacle_layer
from app.core.exceptions import ModulatorError, NavError, ReplayError, ScenarioError
from app.core.metrics import aggregate_task, compute_metrics, format_cell, latency_stats, load_metrics_config
from app.core.modulator import BackgroundDecider, DirectiveScheduler, Modulator, build_modulator, schedule_starves
from app.core.sfm import (
    combine_forces,
    compute_desired_force,
    compute_obstacle_force,
    compute_social_force,
    force_to_cmd,
    plan_global_path,
)
from app.core.world import (
    OccupancyGrid,
    World,
    build_occupancy,
    detect_entities,
    goal_point,
    goal_reached,
    is_visible,
    load_scenario,
    load_scenario_with_grid,
    regions_containing,
    sense_lidar,
    sensed_pedestrians,
    step_world,
)
from app.models.costmap_models import SocialEntityAttr
from app.models.directive_models import ControlState, Directive, Mode, ModulatorConfig
from app.models.metrics_models import (
    EpisodeReport,
    LatencySample,
    MetricsConfig,
    ReplayResult,
    TickRecord,
    TrajectorySample,
)
from app.models.sfm_models import AgentState, DirectAction, PathPlan
from app.models.suite_models import BatchResult, EpisodeRow, FastLoopConfig, SuiteConfig, TaskRow
from app.models.world_models import GoalSpec, Pose, ScenarioSpec

logger = logging.getLogger("harness")

TIME_EPS = 1e-9

Observer = Callable[[World, ControlState], None]


# --- Seeding and initial conditions ---

def episode_seed(seed_base: int, scenario_id: str, repetition: int) -> int:
    digest = hashlib.sha256(f"{seed_base}:{scenario_id}:{repetition}".encode("utf-8")).hexdigest()
    return int(digest[:8], 16)


def jitter_start(scenario: ScenarioSpec, grid: OccupancyGrid, rng: np.random.Generator, fast: FastLoopConfig) -> Pose:
    nominal = scenario.robot.start
    dx, dy = rng.uniform(-fast.start_jitter, fast.start_jitter, size=2)
    dtheta = math.radians(rng.uniform(-fast.heading_jitter_deg, fast.heading_jitter_deg))
    pose = Pose(x=nominal.x + dx, y=nominal.y + dy, theta=nominal.theta + dtheta)
    if grid.disc_hits_occupied(pose.x, pose.y, scenario.robot.radius):
        logger.debug(f"Jittered start {pose.xy} collides; keeping the nominal position")
        return Pose(x=nominal.x, y=nominal.y, theta=pose.theta)
    return pose


def phase_offsets(scenario: ScenarioSpec, rng: np.random.Generator, fast: FastLoopConfig) -> Dict[str, float]:
    return {ped.id: float(rng.uniform(0.0, fast.phase_jitter)) for ped in scenario.pedestrians}


def default_metrics_config() -> MetricsConfig:
    if METRICS_PATH.exists():
        return load_metrics_config(METRICS_PATH)
    return MetricsConfig()


def resolve_modulator_config(config: ModulatorConfig) -> ModulatorConfig:
    """Fill the external endpoint and timeout from the environment when the config leaves them out."""
    if config.source != "external" or config.endpoint:
        return config
    return config.model_copy(update={"endpoint": MODULATOR_URL, "timeout": MODULATOR_TIMEOUT})


# --- Fast-loop helpers ---

def reanchor_markers(
    markers: Sequence[SocialEntityAttr], sensed: Dict[str, Tuple[float, float]], gate: float
) -> Tuple[List[SocialEntityAttr], Set[str]]:
    """
    Move pedestrian markers onto the sensed pedestrian when it is within the gate.
    Returns the markers and the ids that were tracked this tick; an untracked
    marker keeps its last position.
    """
    out = []
    tracked = set()
    for marker in markers:
        pos = sensed.get(marker.entity_id)
        if pos is not None and math.hypot(pos[0] - marker.position[0], pos[1] - marker.position[1]) <= gate:
            marker = marker.model_copy(update={"position": pos})
            tracked.add(marker.entity_id)
        out.append(marker)
    return out, tracked


def lookahead_point(waypoints: Sequence[Tuple[float, float]], position: Tuple[float, float], lookahead: float):
    if not waypoints:
        return None
    pts = np.asarray(waypoints, dtype=float)
    d = np.hypot(pts[:, 0] - position[0], pts[:, 1] - position[1])
    for idx in range(int(np.argmin(d)), len(pts)):
        if d[idx] >= lookahead:
            return (float(pts[idx, 0]), float(pts[idx, 1]))
    return (float(pts[-1, 0]), float(pts[-1, 1]))


def follow_waypoint(
    marker: SocialEntityAttr, position: Tuple[float, float], tolerance: float
) -> Optional[Tuple[float, float]]:
    """Band-centre point on the robot-target line, or None while the robot is close enough."""
    tx, ty = marker.position
    dx, dy = tx - position[0], ty - position[1]
    d = math.hypot(dx, dy)
    centre = (marker.band[0] + marker.band[1]) / 2.0
    if d <= centre + tolerance:
        return None
    return (tx - centre * dx / d, ty - centre * dy / d)


def _goal_xy(scenario: ScenarioSpec, goal: Optional[GoalSpec]) -> Tuple[float, float]:
    if goal is None:
        return goal_point(scenario)
    if goal.region_id is not None:
        try:
            return scenario.region(goal.region_id).anchor
        except KeyError:
            logger.warning(f"Directive goal region '{goal.region_id}' is not in the scenario; using the task goal")
            return goal_point(scenario)
    return (goal.x, goal.y)


def _episode_done(world: World, scenario: ScenarioSpec) -> bool:
    if not goal_reached(scenario, world.robot.pose.xy):
        return False
    target = scenario.task.follow_target
    return target is None or world.pedestrian_finished(target)


# --- Episode ---

def run_episode(
    scenario: ScenarioSpec,
    modulator_config: Optional[ModulatorConfig] = None,
    seed: Optional[int] = None,
    *,
    grid: Optional[OccupancyGrid] = None,
    fast_config: Optional[FastLoopConfig] = None,
    metrics_config: Optional[MetricsConfig] = None,
    modulator: Optional[Modulator] = None,
    repetition: int = 0,
    observer: Optional[Observer] = None,
) -> EpisodeReport:
    """
    Run one episode: the fast loop ticks at dt until the goal is reached or the
    time limit passes, while the slow loop decides every decision_period and on
    instruction changes. Deterministic for a given seed in synchronous mode.
    """
    modulator_config = resolve_modulator_config(modulator_config or ModulatorConfig())
    fast = fast_config or FastLoopConfig()
    metrics_config = metrics_config or default_metrics_config()
    seed = scenario.seed if seed is None else seed
    grid = grid or build_occupancy(scenario.map)
    task = scenario.task
    dt = fast.dt

    rng = np.random.default_rng(seed)
    start = jitter_start(scenario, grid, rng, fast)
    world = World.from_scenario(scenario, grid, start, phase_offsets(scenario, rng, fast))

    inflation = fast.costmap.inflation_radius
    if inflation is None:
        inflation = scenario.robot.radius
    stack = CostmapStack.from_occupancy(grid.occupied, grid.resolution, grid.origin, inflation)

    modulator = modulator or build_modulator(modulator_config, RULES_PATH)
    scheduler = DirectiveScheduler(modulator_config.injected_latency)
    decider = None if modulator_config.synchronous else BackgroundDecider(modulator)

    control = ControlState()
    markers: List[SocialEntityAttr] = []
    issued: List[Directive] = []
    applied = []
    ticks: List[TickRecord] = []
    collisions = []
    latency_log: List[LatencySample] = []

    instruction = scenario.instruction
    schedule = sorted(scenario.instruction_schedule, key=lambda change: change.t)
    schedule_idx = 0
    next_decision = 0.0
    plan: Optional[PathPlan] = None
    held: Optional[DirectAction] = None
    plan_goal = None
    next_replan = 0.0

    max_ticks = int(math.ceil(task.time_limit / dt - TIME_EPS))
    if schedule_starves(modulator_config):
        logger.warning(
            f"Injected latency {modulator_config.injected_latency}s is not below the decision period "
            f"{modulator_config.decision_period}s: every directive is superseded before it applies"
        )
    logger.info(
        f"Episode '{scenario.id}' rep {repetition} seed {seed}: start {start.xy}, "
        f"latency {modulator_config.injected_latency}s, source {modulator_config.source}, controller {fast.controller}"
    )
    try:
        for _ in range(max_ticks):
            t = world.time
            pose = world.robot.pose

            # --- slow loop ---
            changed = False
            while schedule_idx < len(schedule) and schedule[schedule_idx].t <= t + TIME_EPS:
                instruction = schedule[schedule_idx].instruction
                schedule_idx += 1
                changed = True
            if changed or t + TIME_EPS >= next_decision:
                next_decision = t + modulator_config.decision_period
                detections = detect_entities(world, pose, fast.fov)
                if decider is None:
                    tic = time.perf_counter()
                    try:
                        directive = modulator.decide(instruction, detections, world.robot, issued, t)
                    except ModulatorError as e:
                        logger.warning(f"Slow loop failed at t={t:.2f}, keeping the last directive: {e}")
                        directive = None
                    latency_log.append(
                        LatencySample(component="slow_decide", ms=(time.perf_counter() - tic) * 1000.0, t=t)
                    )
                    if directive is not None:
                        issued.append(directive)
                        scheduler.submit(directive)
                elif not decider.request(instruction, detections, world.robot, issued, t):
                    logger.debug(f"Slow loop still busy at t={t:.2f}; skipping this decision")
            if decider is not None:
                try:
                    directive = decider.collect(t)
                except ModulatorError as e:
                    logger.warning(f"Slow loop failed at t={t:.2f}, keeping the last directive: {e}")
                    directive = None
                if directive is not None:
                    latency_log.append(LatencySample(component="slow_decide", ms=decider.last_ms or 0.0, t=t))
                    issued.append(directive)
                    scheduler.submit(directive)

            control, event = scheduler.poll(t, control)
            if event is not None:
                applied.append(event)
                markers = list(control.markers)
                plan = None
            if observer is not None:
                observer(world, control)

            # --- fast loop ---
            tic = time.perf_counter()
            plan_ms = 0.0
            command = (0.0, 0.0)
            if fast.controller == "direct":
                if event is not None:
                    held = hold_action(control, pose, _goal_xy(scenario, control.goal), fast.waypoint_tolerance)
                if held is not None:
                    command = direct_command(held, world.robot, control.params)
            else:
                scan = sense_lidar(world, pose, fast.lidar)
                sensed = sensed_pedestrians(world, pose, fast.lidar.max_range)
                update_obstacle_layer(stack, scan, pose)
                markers, tracked = reanchor_markers(markers, sensed, fast.association_gate)
                if fast.costmap.social_layer_enabled:
                    apply_social_entities(stack, markers)
                merge_layers(stack)

                if control.mode is not None:
                    params = control.params
                    follow = next((m for m in markers if m.band is not None), None)
                    if control.mode == Mode.FOLLOW and follow is not None:
                        waypoint = follow_waypoint(follow, pose.xy, fast.waypoint_tolerance)
                    else:
                        goal_xy = _goal_xy(scenario, control.goal)
                        if plan is None or t + TIME_EPS >= next_replan or goal_xy != plan_goal:
                            plan_tic = time.perf_counter()
                            plan = plan_global_path(stack, pose.xy, goal_xy)
                            plan_ms = (time.perf_counter() - plan_tic) * 1000.0
                            latency_log.append(LatencySample(component="global_plan", ms=plan_ms, t=t))
                            plan_goal = goal_xy
                            next_replan = t + fast.replan_period
                        waypoint = lookahead_point(plan.waypoints, pose.xy, fast.lookahead) if plan.found else None

                    agents = [
                        AgentState(
                            id=ped_id,
                            position=pos,
                            radius=scenario.pedestrian(ped_id).radius,
                            is_follow_target=follow is not None and ped_id == follow.entity_id and ped_id in tracked,
                        )
                        for ped_id, pos in sensed.items()
                    ]
                    state = world.robot
                    forces = combine_forces(
                        compute_desired_force(state, waypoint, params),
                        compute_obstacle_force(state, stack, params, exclude=agents),
                        compute_social_force(state, agents, params),
                    )
                    command = force_to_cmd(forces.total, state, params, dt)
            latency_log.append(
                LatencySample(component="fast_step", ms=(time.perf_counter() - tic) * 1000.0 - plan_ms, t=t)
            )

            world, events = step_world(
                world, command, dt, control.params.max_lin_vel, control.params.max_rot_vel
            )
            collisions.extend(events)
            ticks.append(_tick_record(world, control, fast, len(events)))
            if _episode_done(world, scenario):
                break
    finally:
        if decider is not None:
            decider.shutdown()

    x0, y0 = grid.origin
    report = EpisodeReport(
        scenario=scenario,
        repetition=repetition,
        seed=seed,
        dt=dt,
        latency=modulator_config.injected_latency,
        social_layer_enabled=fast.costmap.social_layer_enabled,
        controller=fast.controller,
        map_extent=(x0, y0, x0 + grid.width * grid.resolution, y0 + grid.height * grid.resolution),
        start=TrajectorySample(t=0.0, x=start.x, y=start.y, theta=start.theta),
        tick_count=len(ticks),
        ticks=ticks,
        collisions=collisions,
        issued=issued,
        applied=applied,
        latency_log=latency_log,
    )
    outcome, values = compute_metrics(report, metrics_config)
    logger.info(
        f"Episode '{scenario.id}' rep {repetition}: {'success' if outcome.success else outcome.reason} "
        f"after {world.time:.2f}s ({len(collisions)} collision events)"
    )
    return report.model_copy(
        update={"outcome": outcome, "metrics": values, "metrics_config_hash": metrics_config.config_hash()}
    )


def _tick_record(world: World, control: ControlState, fast: FastLoopConfig, contacts: int) -> TickRecord:
    scenario = world.scenario
    robot = world.robot
    position = robot.pose.xy
    peds = world.pedestrian_positions()

    def dist(ped_id):
        qx, qy = peds[ped_id]
        return math.hypot(qx - position[0], qy - position[1])

    target = scenario.task.follow_target
    return TickRecord(
        tick=world.tick,
        t=world.time,
        x=robot.pose.x,
        y=robot.pose.y,
        theta=robot.pose.theta,
        v=robot.v,
        omega=robot.omega,
        regions=regions_containing(scenario.regions, position),
        collisions=contacts,
        subject_distances={s.pedestrian_id: dist(s.pedestrian_id) for s in scenario.task.subjects},
        target_distance=dist(target) if target is not None else None,
        target_visible=target is not None and is_visible(world, robot.pose, peds[target], fast.fov),
        mode=control.mode.value if control.mode is not None else None,
        pedestrians=peds,
    )


# --- Report files ---

def report_json(report: EpisodeReport) -> str:
    """Canonical form: wall-clock latency is left out so equal seeds give equal bytes."""
    return report.model_dump_json(exclude={"latency_log"}, indent=2)


def save_report(report: EpisodeReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_json(report), encoding="utf-8")
    return path


def load_report(path) -> EpisodeReport:
    path = Path(path)
    try:
        return EpisodeReport.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ReplayError(f"cannot read episode log {path}: {e}") from e
    except ValidationError as e:
        raise ReplayError(f"malformed episode log {path}: {e.errors()[0]['msg']}") from e


# --- Batch ---

def load_suite(path) -> SuiteConfig:
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        return SuiteConfig.model_validate(document)
    except (OSError, yaml.YAMLError) as e:
        raise NavError(f"cannot read suite {path}: {e}") from e
    except ValidationError as e:
        raise NavError(f"invalid suite {path}: {e}") from e


def run_batch(suite: SuiteConfig, base_dir=None, output_dir=None) -> BatchResult:
    """Run every (scenario, repetition) pair, aggregate per task and write the result tables."""
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    out_dir = Path(output_dir or suite.output_dir or OUTPUT_DIR / suite.name)

    loaded: List[Tuple[str, Optional[ScenarioSpec], Optional[OccupancyGrid], Optional[str]]] = []
    for rel in suite.scenarios:
        path = Path(rel) if Path(rel).is_absolute() else base_dir / rel
        try:
            scenario, grid = load_scenario_with_grid(path)
            loaded.append((scenario.id, scenario, grid, None))
        except ScenarioError as e:
            logger.error(f"Skipping scenario {path}: {e}")
            loaded.append((Path(rel).stem, None, None, str(e)))

    episodes: Dict[Tuple[int, int], EpisodeRow] = {}
    reports: Dict[Tuple[int, int], EpisodeReport] = {}
    with ThreadPoolExecutor(max_workers=suite.workers) as pool:
        futures = {}
        for idx, (scenario_id, scenario, grid, error) in enumerate(loaded):
            for rep in range(suite.repetitions):
                seed = episode_seed(suite.seed_base, scenario_id, rep)
                if scenario is None:
                    episodes[(idx, rep)] = EpisodeRow(
                        scenario_id=scenario_id, archetype="unknown", repetition=rep, seed=seed, error=error
                    )
                    continue
                fut = pool.submit(
                    run_episode,
                    scenario,
                    suite.modulator,
                    seed,
                    grid=grid,
                    fast_config=suite.fast_loop,
                    metrics_config=suite.metrics,
                    repetition=rep,
                )
                futures[fut] = (idx, rep, scenario, seed)
        for fut in as_completed(futures):
            idx, rep, scenario, seed = futures[fut]
            row = EpisodeRow(scenario_id=scenario.id, archetype=scenario.task.archetype, repetition=rep, seed=seed)
            try:
                report = fut.result()
            except Exception as e:
                logger.exception(f"Episode '{scenario.id}' rep {rep} crashed; batch continues")
                row.error = f"{type(e).__name__}: {e}"
            else:
                reports[(idx, rep)] = report
                row.outcome = report.outcome
                row.metrics = report.metrics
            episodes[(idx, rep)] = row

    keys = sorted(episodes)
    rows: List[TaskRow] = []
    latency: Dict[str, dict] = {}
    for idx, (scenario_id, _, _, _) in enumerate(loaded):
        task_keys = [k for k in keys if k[0] == idx]
        done = [episodes[k].metrics for k in task_keys if episodes[k].metrics is not None]
        agg = aggregate_task(done)
        rows.append(TaskRow(task=scenario_id, failed_runs=len(task_keys) - len(done), **agg))
        samples = [s for k in task_keys if k in reports for s in reports[k].latency_log]
        stats = latency_stats(samples)
        if stats:
            latency[scenario_id] = stats

    result = BatchResult(suite=suite.name, rows=rows, episodes=[episodes[k] for k in keys], latency=latency)
    write_batch(result, out_dir, [reports[k] for k in keys if k in reports])
    return result


def results_table(result: BatchResult) -> pd.DataFrame:
    records = [{key: format_cell(value) for key, value in row.model_dump().items()} for row in result.rows]
    return pd.DataFrame.from_records(records, columns=list(TaskRow.model_fields))


def write_batch(result: BatchResult, out_dir: Path, reports: Sequence[EpisodeReport] = ()) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    results_table(result).to_csv(out_dir / "results.csv", index=False)

    episode_records = []
    for ep in result.episodes:
        m = ep.metrics
        episode_records.append(
            {
                "scenario": ep.scenario_id,
                "repetition": ep.repetition,
                "seed": ep.seed,
                "success": format_cell(m.success if m else None),
                "reason": (ep.outcome.reason if ep.outcome else None) or "none",
                "collision": format_cell(m.collision if m else None),
                "smoothness": format_cell(m.smoothness if m else None),
                "subject_score": format_cell(m.subject_score if m else None),
                "region_score": format_cell(m.region_score if m else None),
                "band_fraction": format_cell(ep.outcome.band_fraction if ep.outcome else None),
                "error": ep.error or "",
            }
        )
    pd.DataFrame.from_records(episode_records).to_csv(out_dir / "episodes.csv", index=False)

    latency_records = [
        {"task": task, "component": component, **stats.model_dump()}
        for task, per_component in result.latency.items()
        for component, stats in per_component.items()
    ]
    pd.DataFrame.from_records(
        latency_records, columns=["task", "component", "count", "mean", "p50", "p95", "max"]
    ).to_csv(out_dir / "latency.csv", index=False, float_format="%.3f")

    for report in reports:
        save_report(report, out_dir / "reports" / f"{report.scenario.id}_{report.repetition}.json")
    logger.info(f"Wrote batch results to {out_dir}")
    return out_dir


# --- Export ---

CSV_BASE_COLUMNS = [
    "tick", "t", "x", "y", "theta", "v", "omega", "mode", "regions",
    "collisions", "target_distance", "target_visible",
]
SUBJECT_PREFIX = "subject:"
START_COLUMNS = ["start_t", "start_x", "start_y", "start_theta"]

REGION_COLORS = {"goal": "tab:green", "forbidden": "tab:red", "caution": "tab:orange", "neutral": "tab:gray"}


def _num(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def trajectory_frame(report: EpisodeReport) -> pd.DataFrame:
    subjects = [s.pedestrian_id for s in report.scenario.task.subjects]
    records = []
    for idx, row in enumerate(report.ticks):
        record = {
            "tick": str(row.tick),
            "t": _num(row.t),
            "x": _num(row.x),
            "y": _num(row.y),
            "theta": _num(row.theta),
            "v": _num(row.v),
            "omega": _num(row.omega),
            "mode": row.mode or "",
            "regions": ";".join(row.regions),
            "collisions": str(row.collisions),
            "target_distance": _num(row.target_distance),
            "target_visible": "1" if row.target_visible else "0",
        }
        for sid in subjects:
            record[SUBJECT_PREFIX + sid] = _num(row.subject_distances.get(sid))
        # pose before the first tick, carried on the first row only
        start = report.start if idx == 0 else None
        for column in START_COLUMNS:
            record[column] = _num(getattr(start, column[len("start_"):])) if start is not None else ""
        record["final"] = "1" if idx == len(report.ticks) - 1 else "0"
        records.append(record)
    columns = CSV_BASE_COLUMNS + [SUBJECT_PREFIX + s for s in subjects] + START_COLUMNS + ["final"]
    return pd.DataFrame.from_records(records, columns=columns)


def _export_svg(report: EpisodeReport, path: Path) -> None:
    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot()
    x0, y0, x1, y1 = report.map_extent
    ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, edgecolor="black", gid="map-outline"))
    for region in report.scenario.regions:
        ax.add_patch(
            PolygonPatch(
                region.polygon,
                closed=True,
                alpha=0.3,
                facecolor=REGION_COLORS[region.kind],
                edgecolor=REGION_COLORS[region.kind],
                gid=f"region-{region.id}",
            )
        )
    if report.ticks:
        for ped_id in report.ticks[0].pedestrians:
            track = [row.pedestrians[ped_id] for row in report.ticks]
            ax.plot([p[0] for p in track], [p[1] for p in track], "--", linewidth=1, gid=f"pedestrian-{ped_id}")
        ax.plot([r.x for r in report.ticks], [r.y for r in report.ticks], "-", color="tab:blue", gid="robot-path")
        times = np.array([r.t for r in report.ticks])
        for event in report.applied:
            idx = min(int(np.searchsorted(times, event.applied_at - TIME_EPS)), len(times) - 1)
            row = report.ticks[idx]
            ax.plot([row.x], [row.y], "o", color="black", markersize=4, gid=f"directive-{event.seq}")
    ax.set_xlim(x0, x1)
    ax.set_ylim(y0, y1)
    ax.set_aspect("equal")
    ax.set_title(f"{report.scenario.id} (seed {report.seed})")
    fig.savefig(path, format="svg")


def export_trajectory(report: EpisodeReport, fmt: str = "csv", path=None) -> Path:
    if fmt not in ("csv", "svg"):
        raise ValueError(f"unsupported export format '{fmt}'")
    path = Path(path) if path is not None else Path(f"{report.scenario.id}_{report.repetition}.{fmt}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            trajectory_frame(report).to_csv(path, index=False)
        else:
            _export_svg(report, path)
    except OSError as e:
        raise NavError(f"cannot write {path}: {e}") from e
    logger.info(f"Exported {len(report.ticks)} ticks to {path}")
    return path


# --- Replay ---

def _check_ticks(ticks: Sequence[TickRecord]) -> None:
    for expected, row in enumerate(ticks, start=1):
        if row.tick != expected:
            raise ReplayError(f"tick order broken at row {expected} (found tick {row.tick})")
    for prev, cur in zip(ticks, ticks[1:]):
        if not cur.t > prev.t:
            raise ReplayError(f"timestamps not increasing at tick {cur.tick}")


def _opt(value: str) -> Optional[float]:
    return float(value) if value != "" else None


def read_trajectory_csv(path, scenario: ScenarioSpec) -> EpisodeReport:
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ReplayError(f"cannot read trajectory {path}: {e}") from e
    missing = [c for c in CSV_BASE_COLUMNS + ["final"] if c not in frame.columns]
    if missing:
        raise ReplayError(f"trajectory {path} lacks columns: {', '.join(missing)}")
    if frame.empty or frame["final"].iloc[-1] != "1":
        raise ReplayError(f"trajectory {path} is truncated (no final row)")

    subject_cols = [c for c in frame.columns if c.startswith(SUBJECT_PREFIX)]
    start = None
    if all(c in frame.columns for c in START_COLUMNS) and frame["start_x"].iloc[0] != "":
        head = frame.iloc[0]
        try:
            start = TrajectorySample(**{c[len("start_"):]: float(head[c]) for c in START_COLUMNS})
        except ValueError as e:
            raise ReplayError(f"malformed start pose in {path}: {e}") from e
    ticks = []
    try:
        for rec in frame.to_dict(orient="records"):
            ticks.append(
                TickRecord(
                    tick=int(rec["tick"]),
                    t=float(rec["t"]),
                    x=float(rec["x"]),
                    y=float(rec["y"]),
                    theta=float(rec["theta"]),
                    v=float(rec["v"]),
                    omega=float(rec["omega"]),
                    mode=rec["mode"] or None,
                    regions=[r for r in rec["regions"].split(";") if r],
                    collisions=int(rec["collisions"]),
                    subject_distances={
                        c[len(SUBJECT_PREFIX):]: float(rec[c]) for c in subject_cols if rec[c] != ""
                    },
                    target_distance=_opt(rec["target_distance"]),
                    target_visible=rec["target_visible"] == "1",
                )
            )
    except (ValueError, ValidationError) as e:
        raise ReplayError(f"malformed row in {path}: {e}") from e
    _check_ticks(ticks)
    dt = ticks[1].t - ticks[0].t if len(ticks) > 1 else ticks[0].t
    return EpisodeReport(
        scenario=scenario,
        seed=0,
        dt=dt,
        map_extent=(0.0, 0.0, 0.0, 0.0),
        start=start,
        tick_count=len(ticks),
        ticks=ticks,
    )


def replay(
    source,
    scenario: Union[ScenarioSpec, str, Path, None] = None,
    metrics_config: Optional[MetricsConfig] = None,
) -> ReplayResult:
    """Recompute outcome and metrics from an episode log (.json report, or .csv plus its scenario)."""
    source = Path(source)
    metrics_config = metrics_config or default_metrics_config()
    if source.suffix == ".csv":
        if scenario is None:
            raise ReplayError("replaying a csv trajectory needs its scenario file")
        if not isinstance(scenario, ScenarioSpec):
            scenario = load_scenario(scenario)
        report = read_trajectory_csv(source, scenario)
        outcome, values = compute_metrics(report, metrics_config)
        return ReplayResult(metrics=values, outcome=outcome, matches=None, config_mismatch=False)

    report = load_report(source)
    if len(report.ticks) != report.tick_count:
        raise ReplayError(f"log {source} is truncated: {len(report.ticks)} of {report.tick_count} ticks")
    _check_ticks(report.ticks)
    outcome, values = compute_metrics(report, metrics_config)
    mismatch = report.metrics_config_hash != metrics_config.config_hash()
    if mismatch:
        logger.warning(f"Log {source} was scored under a different metrics config")
    return ReplayResult(
        metrics=values,
        outcome=outcome,
        matches=values == report.metrics,
        config_mismatch=mismatch,
    )
