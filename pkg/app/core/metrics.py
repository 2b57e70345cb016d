import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from pydantic import ValidationError

from app.core.exceptions import NavError
from app.core.geometry import wrap_angle
from app.core.world import goal_reached
from app.models.metrics_models import (
    EpisodeReport,
    LatencySample,
    LatencyStats,
    MetricsConfig,
    MetricValues,
    Outcome,
    Trajectory,
)
from app.models.world_models import SubjectRule, TaskRules

logger = logging.getLogger("metrics")

LATENCY_COMPONENTS = ("slow_decide", "fast_step", "global_plan")


def load_metrics_config(path=None) -> MetricsConfig:
    if path is None:
        return MetricsConfig()
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        return MetricsConfig.model_validate(document)
    except (OSError, yaml.YAMLError, ValidationError) as e:
        raise NavError(f"invalid metrics config {path}: {e}") from e


def wrap(angle: float) -> float:
    return wrap_angle(angle)


# --- Path smoothness ---

def _merged_points(traj: Trajectory, merge_distance: float) -> List[Tuple[float, float]]:
    points = [(traj.samples[0].x, traj.samples[0].y)]
    for s in traj.samples[1:]:
        if math.hypot(s.x - points[-1][0], s.y - points[-1][1]) >= merge_distance:
            points.append((s.x, s.y))
    return points


def curvature_smoothness(traj: Trajectory, merge_distance: float = 0.01) -> Optional[float]:
    """Cumulative absolute heading change between consecutive segments (rad). None below 3 samples."""
    if len(traj.samples) < 3:
        return None
    points = np.asarray(_merged_points(traj, merge_distance))
    if len(points) < 3:
        return 0.0
    seg = np.diff(points, axis=0)
    headings = np.arctan2(seg[:, 1], seg[:, 0])
    return math.fsum(abs(wrap(float(b - a))) for a, b in zip(headings, headings[1:]))


def smoothness_score(value: Optional[float]) -> Optional[float]:
    if value is None:
        return None
    return 100.0 / (1.0 + value)


# --- Subject and region compliance ---

def follow_band_tick_score(d: float, band: Tuple[float, float], config: MetricsConfig) -> float:
    d_min, d_max = band
    if d < d_min:
        score = 100.0 - config.below_band_penalty * (d_min - d) / d_min
    elif d > d_max:
        score = 100.0 - config.above_band_penalty * (d - d_max)
    else:
        score = 100.0
    return max(0.0, min(100.0, score))


def keep_away_tick_score(d: float, config: MetricsConfig) -> float:
    return 100.0 * min(1.0, max(0.0, d) / config.d_safe)


def subject_score(
    report: EpisodeReport,
    subjects: Sequence[SubjectRule],
    config: MetricsConfig,
    band: Optional[Tuple[float, float]] = None,
) -> Optional[float]:
    """Mean over ticks per subject, then unweighted mean over subjects. None with no subjects."""
    if not subjects or not report.ticks:
        return None
    band = band or report.scenario.task.band
    per_subject = []
    for subject in subjects:
        scores = []
        for row in report.ticks:
            d = row.subject_distances.get(subject.pedestrian_id)
            if d is None:
                continue
            if subject.mode == "follow_band":
                scores.append(follow_band_tick_score(d, band, config))
            else:
                scores.append(keep_away_tick_score(d, config))
        if scores:
            per_subject.append(math.fsum(scores) / len(scores))
    if not per_subject:
        return None
    return math.fsum(per_subject) / len(per_subject)


def region_score(report: EpisodeReport, region_ids: Sequence[str], config: MetricsConfig) -> Optional[float]:
    """100 minus the capped mean per-tick severity of each rule region, floored at 0."""
    if not region_ids or not report.ticks:
        return None
    severity = {rid: report.scenario.region(rid).severity_weight for rid in region_ids}
    n = len(report.ticks)
    penalty = 0.0
    for rid in region_ids:
        inside = sum(1 for row in report.ticks if rid in row.regions)
        penalty += min(config.region_cap, severity[rid] * inside / n)
    return max(0.0, 100.0 - penalty)


# --- Episode outcome ---

def band_fraction(report: EpisodeReport, band: Tuple[float, float]) -> Optional[float]:
    """Share of ticks inside the band from the first tick the target was visible. None if never acquired."""
    acquired = None
    for idx, row in enumerate(report.ticks):
        if row.target_visible:
            acquired = idx
            break
    if acquired is None:
        return None
    rows = report.ticks[acquired:]
    d_min, d_max = band
    inside = sum(1 for r in rows if r.target_distance is not None and d_min <= r.target_distance <= d_max)
    return inside / len(rows)


def evaluate_episode(report: EpisodeReport, task_rules: TaskRules, config: MetricsConfig) -> Outcome:
    collided = any(row.collisions > 0 for row in report.ticks) or bool(report.collisions)
    forbidden = set(task_rules.forbidden_regions)
    forbidden_ticks = sum(1 for row in report.ticks if forbidden.intersection(row.regions))
    reached = False
    if report.ticks:
        last = report.ticks[-1]
        reached = last.t <= task_rules.time_limit + 1e-9 and goal_reached(report.scenario, (last.x, last.y))

    fraction = None
    if task_rules.follow_target is not None:
        fraction = band_fraction(report, task_rules.band)

    reason = None
    if forbidden_ticks > 0:
        reason = "semantic_violation"
    elif not reached:
        reason = "timeout"
    elif task_rules.follow_target is not None and (fraction is None or fraction < config.band_threshold):
        reason = "band_violation"
    elif config.strict_collisions and collided:
        reason = "collision"
    return Outcome(
        success=reason is None,
        reason=reason,
        collided=collided,
        goal_reached=reached,
        forbidden_ticks=forbidden_ticks,
        band_fraction=fraction,
    )


def compute_metrics(report: EpisodeReport, config: MetricsConfig) -> Tuple[Outcome, MetricValues]:
    task = report.scenario.task
    outcome = evaluate_episode(report, task, config)
    smoothness = curvature_smoothness(report.trajectory, config.merge_distance)
    values = MetricValues(
        success=outcome.success,
        collision=outcome.collided,
        smoothness=smoothness,
        smoothness_score=smoothness_score(smoothness),
        subject_score=subject_score(report, task.subjects, config),
        region_score=region_score(report, task.scored_regions, config),
    )
    return outcome, values


# --- Latency ---

def latency_stats(latency_log: Iterable[LatencySample]) -> Optional[Dict[str, LatencyStats]]:
    by_component: Dict[str, List[float]] = {}
    for sample in latency_log:
        by_component.setdefault(sample.component, []).append(sample.ms)
    if not by_component:
        return None
    stats = {}
    for component in sorted(by_component):
        values = np.asarray(by_component[component], dtype=float)
        stats[component] = LatencyStats(
            count=int(values.size),
            mean=float(values.mean()),
            p50=float(np.percentile(values, 50)),
            p95=float(np.percentile(values, 95)),
            max=float(values.max()),
        )
    return stats


# --- Batch aggregation ---

def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    if not present:
        return None
    return math.fsum(present) / len(present)


def aggregate_task(metrics: Sequence[MetricValues]) -> Dict[str, Optional[float]]:
    """Table columns for one task. Order of the input does not matter."""
    n = len(metrics)
    if n == 0:
        return {
            "episodes": 0,
            "success_rate": None,
            "collision_rate": None,
            "smoothness": None,
            "smoothness_score": None,
            "subject_score": None,
            "region_score": None,
        }
    return {
        "episodes": n,
        "success_rate": 100.0 * sum(1 for m in metrics if m.success) / n,
        "collision_rate": 100.0 * sum(1 for m in metrics if m.collision) / n,
        "smoothness": _mean(sorted(m.smoothness for m in metrics if m.smoothness is not None)),
        "smoothness_score": _mean(sorted(m.smoothness_score for m in metrics if m.smoothness_score is not None)),
        "subject_score": _mean(sorted(m.subject_score for m in metrics if m.subject_score is not None)),
        "region_score": _mean(sorted(m.region_score for m in metrics if m.region_score is not None)),
    }


def format_cell(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    return f"{value:.2f}"
