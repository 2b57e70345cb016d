import json
import logging
import re
import time
from concurrent.futures import Future, ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple

import requests
import yaml
from pydantic import ValidationError

from app.core.exceptions import (
    DirectiveDecodeError,
    ModulatorError,
    ModulatorUnavailableError,
    ParameterError,
)
from app.core.sfm import apply_param_update
from app.models.costmap_models import LETHAL, SocialEntityAttr
from app.models.directive_models import (
    ApplicationEvent,
    ControlState,
    Directive,
    DetectionSelector,
    GoalTemplate,
    MarkerTemplate,
    Mode,
    ModulatorConfig,
    ModulatorRequest,
    ModulatorResponse,
    RuleMatch,
    RuleSpec,
    RuleTable,
)
from app.models.sfm_models import SfmParams
from app.models.world_models import Detection, GoalSpec, RobotState

logger = logging.getLogger("modulator")

APPLY_EPS = 1e-9


class Modulator(Protocol):
    def decide(
        self,
        instruction: str,
        detections: Sequence[Detection],
        robot_state: RobotState,
        history: Sequence[Directive],
        sim_time: float = 0.0,
    ) -> Directive:
        ...


# --- Scripted rule engine ---

def load_rule_table(path) -> RuleTable:
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        return RuleTable.model_validate(document)
    except (OSError, yaml.YAMLError) as e:
        raise ModulatorError(f"cannot read rule table {path}: {e}") from e
    except ValidationError as e:
        raise ModulatorError(f"invalid rule table {path}: {e}") from e


def _mentions(instruction: str, label: str) -> int:
    """Position of the label in the instruction (underscores read as spaces), -1 if absent."""
    return instruction.find(label.replace("_", " ").lower())


def _select(selector: DetectionSelector, instruction: str, detections: Sequence[Detection]) -> List[Detection]:
    chosen = []
    for det in detections:
        if det.kind != selector.kind:
            continue
        if selector.label is not None and det.class_label != selector.label:
            continue
        if selector.label_in_instruction and _mentions(instruction, det.class_label) < 0:
            continue
        chosen.append(det)
    return chosen


def _marker(template: MarkerTemplate, entity_id: str, label: str, position, vulnerable: bool) -> SocialEntityAttr:
    scale = template.vulnerable_scale if vulnerable else 1.0
    return SocialEntityAttr(
        entity_id=entity_id,
        class_label=label,
        cost_value=min(float(LETHAL), template.cost_value * scale),
        inflation_radius=template.inflation_radius * scale,
        decay_rate=template.decay_rate,
        band=template.band,
        position=position,
    )


def _bind_markers(
    rule: RuleSpec, instruction: str, detections: Sequence[Detection], previous: Optional[Directive]
) -> Optional[List[SocialEntityAttr]]:
    markers: List[SocialEntityAttr] = []
    for template in rule.markers:
        bound = _select(template, instruction, detections)
        if template.nearest_only:
            bound = bound[:1]
        if template.required and not bound:
            return None
        for det in bound:
            markers.append(_marker(template, det.entity_id, det.class_label, det.position, det.vulnerable))
        if template.persist and previous is not None:
            seen = {det.entity_id for det in bound}
            for old in previous.markers:
                if old.entity_id in seen or old.band is not None:
                    continue
                if template.label is not None and old.class_label != template.label:
                    continue
                if template.label_in_instruction and _mentions(instruction, old.class_label) < 0:
                    continue
                markers.append(old)
    return markers


def _bind_goal(
    template: GoalTemplate,
    instruction: str,
    detections: Sequence[Detection],
    marked_ids,
    previous: Optional[Directive],
) -> Optional[GoalSpec]:
    candidates = []
    for det in detections:
        if det.kind != "region" or det.entity_id in marked_ids:
            continue
        if template.label is not None:
            if det.class_label == template.label:
                candidates.append((0, det.distance, det))
            continue
        pos = _mentions(instruction, det.class_label)
        if pos >= 0:
            candidates.append((pos, det.distance, det))
    if candidates:
        candidates.sort(key=lambda c: (c[0], c[1], c[2].entity_id))
        return GoalSpec(region_id=candidates[0][2].entity_id)
    if previous is not None and previous.goal is not None:
        return previous.goal
    return None


def scripted_rules(
    instruction: str,
    detections: Sequence[Detection],
    table: RuleTable,
    history: Sequence[Directive] = (),
) -> RuleMatch:
    """First rule whose keywords and required detections are all satisfied; Idle otherwise."""
    text = instruction.lower()
    previous = history[-1] if history else None
    for rule in table.rules:
        if any(k.lower() not in text for k in rule.keywords):
            continue
        if rule.keywords_any and not any(k.lower() in text for k in rule.keywords_any):
            continue
        markers = _bind_markers(rule, text, detections, previous)
        if markers is None:
            continue
        goal = None
        if rule.goal is not None:
            goal = _bind_goal(rule.goal, text, detections, {m.entity_id for m in markers}, previous)
            if goal is None and rule.goal.required:
                continue
        params = {**table.modes.get(rule.mode, {}), **rule.params}
        return RuleMatch(rule_name=rule.name, mode=rule.mode, param_updates=params, markers=markers, goal=goal)

    mode = table.fallback_mode
    return RuleMatch(rule_name="fallthrough", mode=mode, param_updates=dict(table.modes.get(mode, {})))


class ScriptedModulator:
    def __init__(self, table: RuleTable):
        self.table = table

    def decide(self, instruction, detections, robot_state, history, sim_time: float = 0.0) -> Directive:
        match = scripted_rules(instruction, detections, self.table, history)
        logger.debug(f"Rule '{match.rule_name}' -> {match.mode.value} at t={sim_time:.2f}")
        return Directive(
            mode=match.mode,
            param_updates=match.param_updates,
            markers=match.markers,
            goal=match.goal,
            issued_at=sim_time,
        )


# --- Log replay ---

IDLE_DIRECTIVE = Directive(mode=Mode.IDLE, param_updates={"max_lin_vel": 0.0, "max_rot_vel": 0.0})


class ReplayModulator:
    """Re-issues logged directives: the latest one issued at or before the query time."""

    def __init__(self, directives: Sequence[Directive]):
        self.directives = sorted(directives, key=lambda d: d.issued_at)

    @classmethod
    def from_report(cls, path) -> "ReplayModulator":
        path = Path(path)
        try:
            document = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ModulatorError(f"cannot read replay log {path}: {e}") from e
        records = document.get("issued", [])
        return cls([Directive.model_validate(r) for r in records])

    def decide(self, instruction, detections, robot_state, history, sim_time: float = 0.0) -> Directive:
        chosen = None
        for directive in self.directives:
            if directive.issued_at <= sim_time + APPLY_EPS:
                chosen = directive
            else:
                break
        if chosen is None:
            return IDLE_DIRECTIVE.model_copy(update={"issued_at": sim_time})
        return chosen.model_copy(update={"issued_at": sim_time})


# --- External reasoning service ---

def encode_request(instruction: str, detections: Sequence[Detection], robot_state: RobotState, sim_time: float = 0.0) -> Dict[str, Any]:
    pose = robot_state.pose
    request = ModulatorRequest(
        instruction=instruction,
        robot={"x": pose.x, "y": pose.y, "theta": pose.theta, "v": robot_state.v, "omega": robot_state.omega},
        detections=[
            {
                "id": d.entity_id,
                "class_label": d.class_label,
                "x": d.position[0],
                "y": d.position[1],
                "distance": d.distance,
                "kind": d.kind,
                "vulnerable": d.vulnerable,
            }
            for d in detections
        ],
        sim_time=sim_time,
    )
    return request.model_dump(mode="json")


def request_detections(request: ModulatorRequest) -> List[Detection]:
    return [
        Detection(
            entity_id=d.id,
            class_label=d.class_label,
            position=(d.x, d.y),
            distance=d.distance,
            kind=d.kind,
            vulnerable=d.vulnerable,
        )
        for d in request.detections
    ]


def encode_response(directive: Directive) -> Dict[str, Any]:
    markers = []
    for m in directive.markers:
        wire = {
            "entity_id": m.entity_id,
            "class_label": m.class_label,
            "cost_value": m.cost_value,
            "inflation_radius": m.inflation_radius,
            "decay_rate": m.decay_rate,
            "x": m.position[0],
            "y": m.position[1],
        }
        if m.band is not None:
            wire["d_min"], wire["d_max"] = m.band
        markers.append(wire)
    document: Dict[str, Any] = {
        "mode": directive.mode.value,
        "param_updates": dict(directive.param_updates),
        "markers": markers,
    }
    if directive.goal is not None:
        if directive.goal.region_id is not None:
            document["goal"] = {"region_id": directive.goal.region_id}
        else:
            document["goal"] = {"x": directive.goal.x, "y": directive.goal.y}
    return document


def parse_service_output(text: str) -> Any:
    """Pull a JSON document out of a service reply, tolerating code fences and chatter around it."""
    if not isinstance(text, str):
        text = str(text)
    text = text.strip()

    def _remove_code_fences(src: str) -> str:
        if "```" not in src:
            return src
        matches = re.findall(r"```(?:json|JSON)?\s*(.*?)```", src, flags=re.DOTALL)
        if matches:
            return matches[0].strip()
        return src.replace("```", "")

    def _try_parse(src: str) -> Any:
        for candidate in (src, re.sub(r",\s*([}\]])", r"\1", src)):
            try:
                return json.loads(candidate)
            except json.JSONDecodeError:
                continue
        return None

    cleaned = _remove_code_fences(text)
    direct = _try_parse(cleaned)
    if direct is not None:
        return direct

    # drop any lead-in text before the first brace and any tail after the last
    start, end = cleaned.find("{"), cleaned.rfind("}")
    if 0 <= start < end:
        direct = _try_parse(cleaned[start:end + 1])
        if direct is not None:
            return direct
    raise DirectiveDecodeError("", "could not parse a JSON document from the service reply")


def decode_response(document, detections: Sequence[Detection] = (), sim_time: float = 0.0) -> Directive:
    """Validate a wire response and resolve marker positions against the request's detections."""
    if isinstance(document, (str, bytes)):
        document = parse_service_output(document.decode() if isinstance(document, bytes) else document)
    if not isinstance(document, dict):
        raise DirectiveDecodeError("", "response must be a JSON object")

    for key in (document.get("param_updates") or {}):
        if key not in SfmParams.model_fields:
            raise DirectiveDecodeError(f"param_updates.{key}", f"unknown planner parameter '{key}'")
    try:
        response = ModulatorResponse.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        raise DirectiveDecodeError(".".join(str(p) for p in first["loc"]), first["msg"]) from e

    positions = {d.entity_id: d.position for d in detections}
    markers = []
    for idx, wire in enumerate(response.markers):
        if wire.x is not None:
            position = (wire.x, wire.y)
        elif wire.entity_id in positions:
            position = positions[wire.entity_id]
        else:
            raise DirectiveDecodeError(f"markers.{idx}.entity_id", f"no detection with id '{wire.entity_id}'")
        band = (wire.d_min, wire.d_max) if wire.d_min is not None else None
        markers.append(
            SocialEntityAttr(
                entity_id=wire.entity_id,
                class_label=wire.class_label,
                cost_value=wire.cost_value,
                inflation_radius=wire.inflation_radius,
                decay_rate=wire.decay_rate,
                band=band,
                position=position,
            )
        )

    goal = None
    if response.goal is not None:
        try:
            goal = GoalSpec(**response.goal.model_dump(exclude_none=True))
        except ValidationError as e:
            raise DirectiveDecodeError("goal", e.errors()[0]["msg"]) from e
    return Directive(
        mode=response.mode,
        param_updates=response.param_updates,
        markers=markers,
        goal=goal,
        issued_at=sim_time,
    )


class ExternalModulator:
    def __init__(self, endpoint: str, timeout: float = 15.0, session: Optional[requests.Session] = None):
        if not endpoint:
            raise ModulatorError("external modulator needs an endpoint (set MODULATOR_URL)")
        self.endpoint = endpoint
        self.timeout = timeout
        self.session = session or requests.Session()

    def decide(self, instruction, detections, robot_state, history, sim_time: float = 0.0) -> Directive:
        payload = encode_request(instruction, detections, robot_state, sim_time)
        try:
            resp = self.session.post(self.endpoint, json=payload, timeout=self.timeout)
        except requests.Timeout as e:
            raise ModulatorUnavailableError(f"reasoning service timed out after {self.timeout}s") from e
        except requests.RequestException as e:
            raise ModulatorUnavailableError(f"reasoning service unreachable: {e}") from e
        if resp.status_code >= 500:
            raise ModulatorUnavailableError(f"reasoning service error {resp.status_code}")
        if resp.status_code != 200:
            raise DirectiveDecodeError("", f"reasoning service rejected the request ({resp.status_code}): {resp.text[:200]}")
        return decode_response(resp.text, detections, sim_time)


def build_modulator(config: ModulatorConfig, default_rules_path: Optional[Path] = None) -> Modulator:
    if config.source == "scripted":
        rules_path = config.rules_path or default_rules_path
        if rules_path is None:
            raise ModulatorError("scripted modulator needs a rule table")
        return ScriptedModulator(load_rule_table(rules_path))
    if config.source == "replay":
        if not config.replay_log:
            raise ModulatorError("replay modulator needs replay_log")
        return ReplayModulator.from_report(config.replay_log)
    return ExternalModulator(config.endpoint, config.timeout)


# --- Scheduling ---

def apply_directive(control: ControlState, directive: Directive) -> ControlState:
    """Build the next control state in one piece; raises ParameterError without touching control."""
    params = apply_param_update(control.params, directive.param_updates)
    seq = control.seq + 1
    return ControlState(
        params=params,
        markers=tuple(directive.markers),
        goal=directive.goal,
        mode=directive.mode,
        seq=seq,
        params_seq=seq,
        markers_seq=seq,
        goal_seq=seq,
    )


class DirectiveScheduler:
    """
    Holds at most one pending directive (last writer wins) and releases it at
    the first tick whose sim time reaches issued_at + injected_latency.
    """

    def __init__(self, injected_latency: float = 0.0):
        if injected_latency < 0:
            raise ValueError("injected_latency must be >= 0")
        self.injected_latency = injected_latency
        self.pending: Optional[Directive] = None
        self.superseded = 0

    def submit(self, directive: Directive) -> None:
        if self.pending is not None:
            self.superseded += 1
            logger.info(
                f"Directive issued at t={self.pending.issued_at:.2f} superseded by t={directive.issued_at:.2f}"
            )
        self.pending = directive

    def due_at(self) -> Optional[float]:
        if self.pending is None:
            return None
        return self.pending.issued_at + self.injected_latency

    def poll(self, sim_time: float, control: ControlState) -> Tuple[ControlState, Optional[ApplicationEvent]]:
        if self.pending is None or sim_time + APPLY_EPS < self.pending.issued_at + self.injected_latency:
            return control, None
        directive, self.pending = self.pending, None
        try:
            next_control = apply_directive(control, directive)
        except ParameterError as e:
            logger.warning(f"Rejected directive issued at t={directive.issued_at:.2f}: {e}")
            return control, None
        logger.info(
            f"Applied {directive.mode.value} directive #{next_control.seq} "
            f"(issued t={directive.issued_at:.2f}, applied t={sim_time:.2f})"
        )
        event = ApplicationEvent(
            seq=next_control.seq,
            issued_at=directive.issued_at,
            applied_at=sim_time,
            mode=directive.mode,
            params=next_control.params,
            directive=directive,
        )
        return next_control, event


def schedule_and_apply(
    directive: Directive, config: ModulatorConfig, clock: float, control: Optional[ControlState] = None
) -> Tuple[ControlState, Optional[ApplicationEvent]]:
    """One-shot form of the scheduler: submit, then poll at the given tick time."""
    scheduler = DirectiveScheduler(config.injected_latency)
    scheduler.submit(directive)
    return scheduler.poll(clock, control or ControlState())


def schedule_starves(config: ModulatorConfig) -> bool:
    """True when each pending directive is replaced by the next decision before it comes due."""
    return config.injected_latency + APPLY_EPS >= config.decision_period


class BackgroundDecider:
    """Runs decide() on one worker thread so the fast loop never waits on the slow loop."""

    def __init__(self, modulator: Modulator):
        self.modulator = modulator
        self.executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="modulator")
        self.future: Optional[Future] = None
        self.last_ms: Optional[float] = None

    @property
    def busy(self) -> bool:
        return self.future is not None and not self.future.done()

    def _timed(self, instruction, detections, robot_state, history, sim_time):
        start = time.perf_counter()
        directive = self.modulator.decide(instruction, detections, robot_state, history, sim_time)
        return directive, (time.perf_counter() - start) * 1000.0

    def request(self, instruction, detections, robot_state, history, sim_time: float) -> bool:
        if self.busy:
            return False
        self.future = self.executor.submit(
            self._timed, instruction, list(detections), robot_state, list(history), sim_time
        )
        return True

    def collect(self, sim_time: float) -> Optional[Directive]:
        """Finished answer, re-stamped with the sim time it arrived at; None while pending."""
        if self.future is None or not self.future.done():
            return None
        future, self.future = self.future, None
        directive, self.last_ms = future.result()
        return directive.model_copy(update={"issued_at": sim_time})

    def shutdown(self) -> None:
        self.executor.shutdown(wait=False, cancel_futures=True)
