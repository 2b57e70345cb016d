import logging

from fastapi import APIRouter, HTTPException

from app.config import OUTPUT_DIR, bundled_scenarios, scenario_path
from app.core.exceptions import ModulatorUnavailableError, NavError, ScenarioError
from app.core.harness import run_batch, run_episode
from app.core.world import load_scenario_with_grid
from app.models.costmap_models import CostmapConfig
from app.models.directive_models import ModulatorConfig
from app.models.error_models import HTTPError
from app.models.suite_models import (
    BatchRequest,
    BatchSummary,
    EpisodeRequest,
    EpisodeSummary,
    FastLoopConfig,
    SuiteConfig,
)

# --- Episodes Route ---

logger = logging.getLogger("routes")

router = APIRouter(prefix="/episodes", tags=["episodes"])


@router.get("/")
def test():
    return {"message": "Episodes Endpoint", "success": True, "scenarios": bundled_scenarios()}


@router.post(
    "/",
    response_model=EpisodeSummary,
    responses={
        404: {"model": HTTPError, "description": "Unknown bundled scenario"},
        422: {"model": HTTPError, "description": "Scenario failed validation"},
        503: {"model": HTTPError, "description": "Reasoning source unavailable"},
    },
)
def run_bundled_episode(data: EpisodeRequest) -> EpisodeSummary:
    path = scenario_path(data.scenario)
    if not path.exists():
        raise HTTPException(status_code=404, detail=f"Unknown scenario '{data.scenario}'")
    try:
        scenario, grid = load_scenario_with_grid(path)
        report = run_episode(
            scenario,
            ModulatorConfig(injected_latency=data.injected_latency),
            data.seed,
            grid=grid,
            fast_config=FastLoopConfig(
                costmap=CostmapConfig(social_layer_enabled=data.social_layer_enabled), controller=data.controller
            ),
        )
    except ScenarioError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except ModulatorUnavailableError as e:
        raise HTTPException(status_code=503, detail=str(e))

    return EpisodeSummary(
        success=True,
        scenario_id=scenario.id,
        seed=report.seed,
        ticks=report.tick_count,
        outcome=report.outcome,
        metrics=report.metrics,
        applied_modes=[event.mode.value for event in report.applied],
    )


@router.post(
    "/batch",
    response_model=BatchSummary,
    responses={
        404: {"model": HTTPError, "description": "Unknown bundled scenario"},
        422: {"model": HTTPError, "description": "Suite failed validation"},
    },
)
def run_bundled_batch(data: BatchRequest) -> BatchSummary:
    paths = []
    for name in data.scenarios:
        path = scenario_path(name)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"Unknown scenario '{name}'")
        paths.append(str(path))
    try:
        suite = SuiteConfig(
            name="api",
            scenarios=paths,
            repetitions=data.repetitions,
            seed_base=data.seed_base,
            modulator=ModulatorConfig(injected_latency=data.injected_latency),
        )
        result = run_batch(suite, output_dir=OUTPUT_DIR / "api")
    except NavError as e:
        raise HTTPException(status_code=422, detail=str(e))
    return BatchSummary(success=True, rows=result.rows)
