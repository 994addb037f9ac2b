"""Factories wiring settings to services.

Every CLI command builds what it needs through these functions, so the way a
map, a planner or a benchmark runner is derived from the configuration lives
in one place.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from pydantic import ValidationError

from minehaul.config import Settings, config_hash, get_settings, load_settings, model_hash
from minehaul.errors import ConfigError, ConfigMismatchError, InputMissingError, InvalidInputError
from minehaul.schemas.benchmark import TaskSpec
from minehaul.schemas.common import Direction, FusionMode, TaskKind
from minehaul.schemas.world import MineMap, TruckParams
from minehaul.services.benchmark_service import BenchmarkRunner, PolicyName, navigation_specs
from minehaul.services.collection_service import CollectionService
from minehaul.services.expert_service import ScriptedExpert
from minehaul.services.map_service import build_test_maps, load_map
from minehaul.services.planner_service import FusionPlanner, load_checkpoint
from minehaul.services.route_service import loop_route

__all__ = [
    "get_config",
    "resolve_settings",
    "get_maps",
    "get_truck_params",
    "get_expert",
    "get_planner",
    "get_collection_service",
    "get_benchmark_runner",
    "eval_task_spec",
]

logger = logging.getLogger(__name__)

MAP_KEYS = ("loop_map", "network_map")


def get_config() -> Settings:
    """Default settings (defaults plus environment)."""
    return get_settings()


def resolve_settings(
    config: Optional[Path] = None,
    seed: Optional[int] = None,
    jobs: Optional[int] = None,
    epochs: Optional[int] = None,
    mode: Optional[FusionMode] = None,
) -> Settings:
    """Settings from a config file with CLI flags applied on top.

    Raises:
        ConfigError: If a flag value fails validation
    """
    settings = load_settings(config, seed=seed, jobs=jobs)
    sections: Dict[str, Dict[str, Any]] = {}
    if epochs is not None:
        sections["training"] = {"epochs": epochs}
    if mode is not None:
        sections["deployment"] = {"mode": FusionMode(mode).value}
    if not sections:
        return settings
    values = settings.model_dump()
    for name, update in sections.items():
        values[name] = {**values[name], **update}
    try:
        # model_validate skips the settings sources, so the environment cannot undo a flag.
        return Settings.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"invalid command-line override: {e}", details={"errors": e.errors()}) from e


def get_maps(settings: Settings, map_dir: Optional[Path] = None) -> Dict[str, MineMap]:
    """Benchmark maps, read from ``map_dir`` when given, else generated.

    Raises:
        InputMissingError: If ``map_dir`` lacks one of the map files
    """
    if map_dir is None:
        return build_test_maps(settings.world.road_width, settings.world.junction_margin)
    maps = {}
    for key in MAP_KEYS:
        path = map_dir / f"{key}.json"
        if not path.exists():
            raise InputMissingError(f"map file not found: {path}", details={"path": str(path)})
        maps[key] = load_map(path)
    return maps


def get_truck_params(settings: Settings) -> TruckParams:
    return TruckParams.from_section(settings.truck)


def get_expert(settings: Settings) -> ScriptedExpert:
    return ScriptedExpert(get_truck_params(settings), settings.expert, settings.world.road_width)


def get_planner(
    settings: Settings, checkpoint: Path, force: bool = False
) -> Tuple[FusionPlanner, Dict[str, Any]]:
    """Load a checkpoint, refusing one trained under another model configuration.

    Raises:
        InputMissingError: If the checkpoint does not exist
        ConfigMismatchError: On a model-hash mismatch without ``force``
    """
    planner, meta = load_checkpoint(checkpoint, model_hash(settings), force)
    if meta.get("config_hash") not in (None, config_hash(settings)):
        logger.info(f"Checkpoint {checkpoint.name} was trained under config {meta['config_hash'][:12]}")
    return planner, meta


def get_collection_service(settings: Settings, maps: Dict[str, MineMap]) -> CollectionService:
    return CollectionService(settings, maps)


def get_benchmark_runner(
    settings: Settings,
    maps: Dict[str, MineMap],
    policy: PolicyName = "planner",
    checkpoint: Optional[Path] = None,
    force: bool = False,
) -> BenchmarkRunner:
    """Runner for the planner in ``checkpoint`` or for the scripted expert.

    Raises:
        InvalidInputError: If ``policy`` is neither ``planner`` nor ``expert``
        InputMissingError: If the planner policy is requested without a checkpoint
    """
    if policy not in ("planner", "expert"):
        raise InvalidInputError(f"unknown policy '{policy}'", details={"policy": policy})
    planner = None
    if policy == "planner":
        if checkpoint is None:
            raise InputMissingError("the planner policy needs --checkpoint")
        planner, _ = get_planner(settings, checkpoint, force)
    return BenchmarkRunner(settings, maps, planner, policy)


def eval_task_spec(settings: Settings, maps: Dict[str, MineMap]) -> TaskSpec:
    """The single episode `eval` runs: a loop lap or the first sampled network route.

    Raises:
        ConfigMismatchError: If no network route satisfies the navigation constraints
    """
    deployment = settings.deployment
    mode = FusionMode(deployment.mode)
    if settings.world.map_name == "network":
        specs, notes = navigation_specs(settings, maps, mode)
        if not specs:
            raise ConfigMismatchError("no feasible navigation route for eval", details={"notes": notes})
        return specs[0].model_copy(update={"gnss_failure_prob": deployment.gnss_failure_prob})
    direction = Direction(deployment.direction)
    route = loop_route(maps["loop_map"], direction)
    return TaskSpec(
        task=TaskKind.LANE_STABLE,
        map_name="loop_map",
        route=route.legs,
        route_length=route.length,
        direction=direction,
        gnss_failure_prob=deployment.gnss_failure_prob,
        seed=settings.seed,
        mode=mode,
        max_time=deployment.episode_seconds,
        record_trajectory=True,
    )
