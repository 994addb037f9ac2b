"""MiningNav benchmark: lane-stable, disturbance and navigation tasks.

Every episode is described by a ``TaskSpec`` built deterministically from the
settings and the seed list, run in its own ``World`` and reduced to an
``EpisodeResult``. Episodes are independent; with ``jobs > 1`` they run in a
process pool and results are put back into task order before aggregation, so
reports do not depend on the worker count.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy import stats

from minehaul.config import BenchSection, Settings, config_hash, model_hash
from minehaul.errors import BenchmarkThresholdError
from minehaul.schemas.benchmark import (
    BenchmarkReport,
    EpisodeResult,
    IntersectionPass,
    IntersectionSummary,
    TaskSpec,
)
from minehaul.schemas.common import Direction, FusionMode, TaskKind
from minehaul.schemas.world import CollisionReport, MineMap, TruckParams
from minehaul.services.executor_service import EpisodeTrace, ExpertPlanner, Planner, run_executor
from minehaul.services.expert_service import ScriptedExpert
from minehaul.services.planner_service import FusionPlanner, load_checkpoint
from minehaul.services.route_service import Route, build_route, count_turning, loop_route, sample_navigation_route
from minehaul.services.simulation_service import World, initial_state_on_route
from minehaul.services.traffic_service import spawn_traffic

logger = logging.getLogger(__name__)

PolicyName = Literal["planner", "expert"]

LAP_M = 1500.0
SCENARIO_CLASSES = ("straight", "turn-left", "turn-right")
CLASS_WINDOW_M = 40.0
STRAIGHT_CURVATURE = 1e-3
ROUTE_DRAWS = 50
EPISODE_COLUMNS = [
    "task",
    "mode",
    "seed",
    "direction",
    "scenario",
    "gnss_failure_prob",
    "route_length",
    "completion",
    "collisions",
    "interventions",
    "red_dots",
    "safety_stop",
    "success",
    "recovered",
    "recovery_time",
    "gnss_losses",
    "max_speed",
    "overspeed_fraction",
    "deviation_fraction",
    "interventions_per_lap",
    "duration",
    "inference_calls",
    "dynamics_steps",
]
AGGREGATE_COLUMNS = [
    "completion",
    "collisions",
    "interventions",
    "red_dots",
    "gnss_losses",
    "max_speed",
    "overspeed_fraction",
    "deviation_fraction",
    "interventions_per_lap",
    "success",
]


class DisturbanceMonitor:
    """Ends a disturbance episode once the safe state has held long enough.

    The safe state is |lateral| <= ``safe_lateral`` and |heading| <=
    ``safe_heading_deg``; it must begin within ``recovery_s`` and then hold
    for ``safe_hold_s`` without a break.
    """

    def __init__(self, bench: BenchSection):
        self.bench = bench
        self.heading_tol = math.radians(bench.safe_heading_deg)
        self.safe_since: Optional[float] = None
        self.recovered = False
        self.recovery_time: Optional[float] = None

    def __call__(self, world: World, report: CollisionReport) -> bool:
        cfg = self.bench
        t = world.state.time
        safe = abs(report.lateral_error) <= cfg.safe_lateral and abs(report.heading_error) <= self.heading_tol
        if not safe:
            self.safe_since = None
        elif self.safe_since is None:
            # The state has been safe since the start of this step.
            self.safe_since = t - world.dt
        if self.safe_since is not None and self.safe_since <= cfg.recovery_s:
            if t - self.safe_since >= cfg.safe_hold_s - 1e-9:
                self.recovered = True
                self.recovery_time = max(0.0, self.safe_since)
                return True
        return self.safe_since is None and t >= cfg.recovery_s


def classify_start(route: Route, s: float, window: float = CLASS_WINDOW_M) -> str:
    """Scenario class of a start point from the curvature just ahead."""
    _, kappa = route.curvature_window(s, s + window)
    if len(kappa) == 0 or float(np.max(np.abs(kappa))) < STRAIGHT_CURVATURE:
        return "straight"
    return "turn-left" if kappa[int(np.argmax(np.abs(kappa)))] > 0 else "turn-right"


def episode_success(result: EpisodeResult) -> bool:
    """Recovered (disturbance) or completed (route tasks) without any safety event."""
    clean = result.collisions == 0 and result.interventions == 0 and not result.safety_stop
    if result.task is TaskKind.DISTURBANCE:
        return bool(result.recovered) and clean
    return result.completion >= 1.0 - 1e-9 and clean


def intersection_passes(route: Route, trace: EpisodeTrace, start_s: float = 0.0) -> List[IntersectionPass]:
    """An intersection is passed when its arc is driven with no collision or intervention on it."""
    reached = start_s + trace.max_progress
    passes = []
    for turn in route.turns:
        hit = any(
            e.kind in ("collision", "intervention")
            and e.route_s is not None
            and turn.s_start <= e.route_s <= turn.s_end
            for e in trace.events
        )
        passes.append(
            IntersectionPass(
                intersection=turn.intersection,
                node=turn.node,
                command=turn.command,
                angle=turn.angle,
                sharp=turn.sharp,
                passed=reached >= turn.s_end and not hit,
            )
        )
    return passes


def bootstrap_gap(
    a: Sequence[float],
    b: Sequence[float],
    confidence: float = 0.9,
    n_resamples: int = 2000,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """One-sided lower confidence bound of mean(a) - mean(b).

    Both samples are resampled independently (percentile bootstrap).

    Raises:
        ValueError: If either sample is empty
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("bootstrap needs two non-empty samples")
    if np.all(a == a[0]) and np.all(b == b[0]):
        return float(a[0] - b[0])

    def gap(x, y, axis=-1):
        return np.mean(x, axis=axis) - np.mean(y, axis=axis)

    res = stats.bootstrap(
        (a, b),
        gap,
        n_resamples=n_resamples,
        confidence_level=confidence,
        alternative="greater",
        method="percentile",
        vectorized=True,
        random_state=rng if rng is not None else np.random.default_rng(0),
    )
    return float(res.confidence_interval.low)


def seed_list(settings: Settings, n: Optional[int] = None) -> List[int]:
    count = n if n is not None else settings.bench.seeds
    return [settings.seed + i for i in range(count)]


# -- task construction --------------------------------------------------------


def lane_stable_specs(
    settings: Settings, maps: Dict[str, MineMap], seeds: Sequence[int], mode: FusionMode
) -> List[TaskSpec]:
    """Both loop directions, with and without GNSS failures, for every seed."""
    loop_map = maps["loop_map"]
    failure_probs = sorted({0.0, settings.bench.gnss_failure_prob})
    specs = []
    for direction in Direction:
        route = loop_route(loop_map, direction)
        max_time = max(settings.deployment.episode_seconds, 3.0 * route.length / settings.expert.speed_limit)
        for prob in failure_probs:
            for seed in seeds:
                specs.append(
                    TaskSpec(
                        task=TaskKind.LANE_STABLE,
                        map_name="loop_map",
                        route=route.legs,
                        route_length=route.length,
                        direction=direction,
                        scenario="lap",
                        gnss_failure_prob=prob,
                        seed=seed,
                        mode=mode,
                        max_time=max_time,
                        record_trajectory=seed == seeds[0],
                    )
                )
    return specs


def _draw_start(route: Route, scenario: str, rng: np.random.Generator, tries: int = 1000) -> Optional[float]:
    for _ in range(tries):
        s = float(rng.uniform(0.0, route.length))
        if classify_start(route, s) == scenario:
            return s
    return None


def disturbance_specs(
    settings: Settings,
    maps: Dict[str, MineMap],
    mode: FusionMode,
    n_trials: Optional[int] = None,
) -> Tuple[List[TaskSpec], List[str]]:
    """Perturbed starts for each scenario class, alternating loop directions.

    Trial draws depend only on the master seed, the class and the trial
    index, so every fusion mode faces the same disturbances.
    """
    bench = settings.bench
    trials = n_trials if n_trials is not None else bench.disturbance_trials
    loop_map = maps["loop_map"]
    routes = {d: loop_route(loop_map, d) for d in Direction}
    expert = ScriptedExpert(TruckParams.from_section(settings.truck), settings.expert, settings.world.road_width)
    yaw_bound = math.radians(bench.yaw_deg)
    specs: List[TaskSpec] = []
    notes: List[str] = []
    for c, scenario in enumerate(SCENARIO_CLASSES):
        for trial in range(trials):
            rng = np.random.default_rng([settings.seed, c, trial])
            direction = Direction.COUNTER_CLOCKWISE if trial % 2 == 0 else Direction.CLOCKWISE
            route = routes[direction]
            s0 = _draw_start(route, scenario, rng)
            if s0 is None:
                notes.append(f"{scenario} trial {trial} skipped: no {direction.value} start of that class")
                continue
            cruise = initial_state_on_route(route, s0, speed=settings.expert.speed_limit)
            speed = expert.curve_speed(cruise, route, s0)
            specs.append(
                TaskSpec(
                    task=TaskKind.DISTURBANCE,
                    map_name="loop_map",
                    route=route.legs,
                    route_length=route.length,
                    direction=direction,
                    scenario=scenario,
                    seed=settings.seed + trial,
                    mode=mode,
                    start_s=s0,
                    lateral_offset=float(rng.uniform(-bench.lateral_m, bench.lateral_m)),
                    yaw_offset=float(rng.uniform(-yaw_bound, yaw_bound)),
                    initial_speed=speed,
                    max_time=bench.recovery_s + bench.safe_hold_s + 1.0,
                )
            )
    return specs, notes


def navigation_specs(
    settings: Settings, maps: Dict[str, MineMap], mode: FusionMode
) -> Tuple[List[TaskSpec], List[str]]:
    """Random network routes of at least ``route_min_m`` with a turning intersection."""
    bench = settings.bench
    network = maps["network_map"]
    rng = np.random.default_rng([settings.seed, len(SCENARIO_CLASSES)])
    specs: List[TaskSpec] = []
    notes: List[str] = []
    for i in range(bench.navigation_routes):
        route = None
        for _ in range(ROUTE_DRAWS):
            route = sample_navigation_route(network, rng, min_length=bench.route_min_m)
            if route is not None:
                break
        if route is None:
            notes.append(f"route {i} skipped: no feasible route in {ROUTE_DRAWS} draws")
            continue
        try:
            spec = TaskSpec(
                task=TaskKind.NAVIGATION,
                map_name="network_map",
                route=route.legs,
                route_length=route.length,
                turning_intersections=count_turning(route),
                scenario="route",
                seed=settings.seed + i,
                mode=mode,
                max_time=3.0 * route.length / settings.expert.speed_limit + 60.0,
                record_trajectory=i == 0,
            )
        except ValidationError as e:
            notes.append(f"route {i} skipped: {e.errors()[0]['msg']}")
            continue
        specs.append(spec)
    return specs, notes


# -- execution ----------------------------------------------------------------


class BenchmarkRunner:
    """Runs task specs against one policy.

    Args:
        settings: Resolved settings
        maps: Maps keyed ``loop_map`` / ``network_map``
        planner: Trained planner; required unless ``policy`` is ``expert``
        policy: ``planner`` or ``expert``
    """

    def __init__(
        self,
        settings: Settings,
        maps: Dict[str, MineMap],
        planner: Optional[FusionPlanner] = None,
        policy: PolicyName = "planner",
    ):
        if policy == "planner" and planner is None:
            raise ValueError("a planner is required unless the expert policy is benchmarked")
        self.settings = settings
        self.maps = maps
        self.planner = planner
        self.policy = policy
        self.params = TruckParams.from_section(settings.truck)
        self.expert = ScriptedExpert(self.params, settings.expert, settings.world.road_width)
        self._routes: Dict[Tuple, Route] = {}

    def route_for(self, spec: TaskSpec) -> Route:
        closed = spec.task is not TaskKind.NAVIGATION
        key = (spec.map_name, closed, tuple((leg.edge, leg.reverse) for leg in spec.route))
        if key not in self._routes:
            self._routes[key] = build_route(self.maps[spec.map_name], spec.route, closed=closed)
        return self._routes[key]

    def world_for(self, spec: TaskSpec) -> World:
        route = self.route_for(spec)
        mine_map = self.maps[spec.map_name]
        rng = np.random.default_rng(spec.seed)
        state = initial_state_on_route(route, spec.start_s, spec.lateral_offset, spec.yaw_offset, spec.initial_speed)
        traffic = spawn_traffic(mine_map, spec.n_traffic, rng, route=route, ego_s=spec.start_s, params=self.params)
        return World(
            mine_map,
            route,
            state,
            self.params,
            self.settings.world,
            self.settings.sensors,
            gnss_failure_prob=spec.gnss_failure_prob,
            rng=rng,
            traffic=traffic,
        )

    def _planner_for(self, world: World) -> Planner:
        if self.policy == "expert":
            return ExpertPlanner(self.expert, world, k=self.settings.data.k_lookahead)
        return self.planner

    def run_task(self, spec: TaskSpec) -> Tuple[EpisodeResult, EpisodeTrace]:
        """Run one episode and reduce it to a result."""
        world = self.world_for(spec)
        monitor = DisturbanceMonitor(self.settings.bench) if spec.task is TaskKind.DISTURBANCE else None
        trace = run_executor(
            world,
            self._planner_for(world),
            spec.mode,
            spec.max_time,
            hlc_source=self.expert,
            deployment=self.settings.deployment,
            speed_limit=self.settings.expert.speed_limit,
            record=spec.record_trajectory,
            monitor=monitor,
            stop_at_route_end=spec.task is not TaskKind.DISTURBANCE,
        )
        intersections = (
            intersection_passes(world.route, trace, 0.0) if spec.task is TaskKind.NAVIGATION else []
        )
        result = EpisodeResult(
            task=spec.task,
            mode=spec.mode,
            seed=spec.seed,
            direction=spec.direction,
            scenario=spec.scenario,
            gnss_failure_prob=spec.gnss_failure_prob,
            route_length=spec.route_length,
            completion=float(np.clip(trace.max_progress / spec.route_length, 0.0, 1.0)),
            collisions=trace.collisions,
            interventions=trace.interventions,
            safety_stop=trace.safety_stop,
            recovered=monitor.recovered if monitor is not None else None,
            recovery_time=monitor.recovery_time if monitor is not None else None,
            gnss_losses=trace.gnss_losses,
            max_speed=trace.max_speed,
            overspeed_fraction=trace.overspeed_fraction,
            deviation_fraction=trace.deviation_fraction,
            duration=trace.duration,
            inference_calls=trace.inference_calls,
            dynamics_steps=trace.dynamics_steps,
            intersections=intersections,
            events=trace.events,
        )
        logger.info(
            f"{spec.task.value} episode seed {spec.seed} ({spec.scenario}, {spec.direction.value}) done",
            extra={
                "mode": spec.mode.value,
                "completion": round(result.completion, 4),
                "interventions": result.interventions,
                "collisions": result.collisions,
            },
        )
        return result, trace

    def run_specs(
        self, specs: Sequence[TaskSpec], jobs: int = 1, checkpoint: Optional[Path] = None, force: bool = False
    ) -> List[Tuple[EpisodeResult, EpisodeTrace]]:
        """Run specs, in a process pool when ``jobs > 1``; output follows spec order.

        Workers rebuild the planner from ``checkpoint`` (the planner policy
        needs it for ``jobs > 1``).
        """
        if jobs <= 1 or len(specs) <= 1:
            return [self.run_task(spec) for spec in specs]
        if self.policy == "planner" and checkpoint is None:
            raise ValueError("parallel planner runs need the checkpoint path")
        map_json = {k: m.model_dump_json() for k, m in self.maps.items()}
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_init_worker,
            initargs=(self.settings, map_json, self.policy, checkpoint, force),
        ) as pool:
            return list(pool.map(_run_in_worker, specs))


_worker: Optional[BenchmarkRunner] = None


def _init_worker(
    settings: Settings, map_json: Dict[str, str], policy: PolicyName, checkpoint: Optional[Path], force: bool
) -> None:
    global _worker
    # Maps travel as JSON; their cached spatial index stays in the parent.
    maps = {k: MineMap.model_validate_json(v) for k, v in map_json.items()}
    planner = None
    if policy == "planner":
        planner, _ = load_checkpoint(checkpoint, model_hash(settings), force)
    _worker = BenchmarkRunner(settings, maps, planner, policy)


def _run_in_worker(spec: TaskSpec) -> Tuple[EpisodeResult, EpisodeTrace]:
    return _worker.run_task(spec)


# -- aggregation --------------------------------------------------------------


def episode_row(result: EpisodeResult) -> Dict:
    return {
        "task": result.task.value,
        "mode": result.mode.value,
        "seed": result.seed,
        "direction": result.direction.value,
        "scenario": result.scenario,
        "gnss_failure_prob": result.gnss_failure_prob,
        "route_length": result.route_length,
        "completion": result.completion,
        "collisions": result.collisions,
        "interventions": result.interventions,
        "red_dots": result.red_dots,
        "safety_stop": int(result.safety_stop),
        "success": int(episode_success(result)),
        "recovered": None if result.recovered is None else int(result.recovered),
        "recovery_time": result.recovery_time,
        "gnss_losses": result.gnss_losses,
        "max_speed": result.max_speed,
        "overspeed_fraction": result.overspeed_fraction,
        "deviation_fraction": result.deviation_fraction,
        "interventions_per_lap": result.interventions * LAP_M / result.route_length,
        "duration": result.duration,
        "inference_calls": result.inference_calls,
        "dynamics_steps": result.dynamics_steps,
    }


def episode_table(results: Sequence[EpisodeResult]) -> pd.DataFrame:
    """One row per episode, fixed column order."""
    return pd.DataFrame([episode_row(r) for r in results], columns=EPISODE_COLUMNS)


def summarize_intersections(results: Sequence[EpisodeResult]) -> List[IntersectionSummary]:
    """Attempts and passes per (intersection, turn side), sorted by intersection."""
    counts: Dict[Tuple, List[int]] = {}
    for result in results:
        for p in result.intersections:
            key = (p.intersection, p.command, p.sharp)
            tally = counts.setdefault(key, [0, 0])
            tally[0] += 1
            tally[1] += int(p.passed)
    return [
        IntersectionSummary(intersection=i, command=cmd, sharp=sharp, attempts=a, passes=p)
        for (i, cmd, sharp), (a, p) in sorted(counts.items(), key=lambda kv: (kv[0][0], kv[0][1].value))
    ]


def build_report(
    task: TaskKind,
    mode: FusionMode,
    settings: Settings,
    seeds: Sequence[int],
    results: Sequence[EpisodeResult],
    notes: Optional[List[str]] = None,
) -> BenchmarkReport:
    """Aggregate per-episode results; every aggregate is a plain mean over episodes."""
    table = episode_table(results)
    aggregates: Dict[str, float] = {"episodes": float(len(table))}
    by_class: Dict[str, float] = {}
    by_direction: Dict[str, float] = {}
    if len(table):
        for col in AGGREGATE_COLUMNS:
            aggregates[col] = float(table[col].astype(float).mean())
        by_class = {k: float(v) for k, v in table.groupby("scenario")["success"].mean().items()}
        by_direction = {k: float(v) for k, v in table.groupby("direction")["success"].mean().items()}
    return BenchmarkReport(
        task=task,
        mode=mode,
        config_hash=config_hash(settings),
        seeds=list(seeds),
        episodes=list(results),
        aggregates=aggregates,
        success_by_class=by_class,
        success_by_direction=by_direction,
        intersections=summarize_intersections(results),
        notes=notes or [],
    )


def threshold_failures(report: BenchmarkReport, bench: BenchSection) -> List[str]:
    """Acceptance thresholds a report misses (empty when it passes)."""
    agg = report.aggregates
    failures = []
    if not report.episodes:
        return failures
    if report.task is TaskKind.LANE_STABLE:
        if agg["completion"] < bench.min_completion:
            failures.append(f"completion {agg['completion']:.3f} < {bench.min_completion}")
        if agg["interventions_per_lap"] > bench.max_interventions_per_lap:
            failures.append(
                f"interventions per {LAP_M:.0f} m {agg['interventions_per_lap']:.2f} > {bench.max_interventions_per_lap}"
            )
    if report.task is TaskKind.DISTURBANCE and agg["success"] < bench.min_disturbance_success:
        failures.append(f"disturbance success {agg['success']:.3f} < {bench.min_disturbance_success}")
    return failures


def enforce_thresholds(report: BenchmarkReport, bench: BenchSection) -> None:
    """Raises:
    BenchmarkThresholdError: If the report misses a configured threshold
    """
    failures = threshold_failures(report, bench)
    if failures:
        raise BenchmarkThresholdError(
            f"{report.task.value} benchmark below threshold: " + "; ".join(failures),
            details={"task": report.task.value, "mode": report.mode.value, "failures": failures},
        )


# -- task entry points ----------------------------------------------------------


def _run(
    runner: BenchmarkRunner,
    task: TaskKind,
    specs: List[TaskSpec],
    seeds: Sequence[int],
    notes: List[str],
    jobs: int,
    checkpoint: Optional[Path],
    force: bool,
) -> Tuple[BenchmarkReport, List[Tuple[EpisodeResult, EpisodeTrace]]]:
    mode = specs[0].mode if specs else FusionMode(runner.settings.deployment.mode)
    logger.info(f"Running {len(specs)} {task.value} episodes", extra={"mode": mode.value, "jobs": jobs})
    outcomes = runner.run_specs(specs, jobs=jobs, checkpoint=checkpoint, force=force)
    report = build_report(task, mode, runner.settings, seeds, [r for r, _ in outcomes], notes)
    return report, outcomes


def run_lane_stable(
    runner: BenchmarkRunner,
    mode: FusionMode,
    seeds: Sequence[int],
    jobs: int = 1,
    checkpoint: Optional[Path] = None,
    force: bool = False,
) -> Tuple[BenchmarkReport, List[Tuple[EpisodeResult, EpisodeTrace]]]:
    """Loop laps in both directions, failure-free and with GNSS failures."""
    specs = lane_stable_specs(runner.settings, runner.maps, seeds, FusionMode(mode))
    return _run(runner, TaskKind.LANE_STABLE, specs, seeds, [], jobs, checkpoint, force)


def run_disturbance(
    runner: BenchmarkRunner,
    mode: FusionMode,
    n_trials: Optional[int] = None,
    jobs: int = 1,
    checkpoint: Optional[Path] = None,
    force: bool = False,
) -> Tuple[BenchmarkReport, List[Tuple[EpisodeResult, EpisodeTrace]]]:
    """Recovery from perturbed starts, ``n_trials`` per scenario class."""
    specs, notes = disturbance_specs(runner.settings, runner.maps, FusionMode(mode), n_trials)
    seeds = sorted({spec.seed for spec in specs})
    return _run(runner, TaskKind.DISTURBANCE, specs, seeds, notes, jobs, checkpoint, force)


def run_navigation(
    runner: BenchmarkRunner,
    mode: FusionMode,
    jobs: int = 1,
    checkpoint: Optional[Path] = None,
    force: bool = False,
) -> Tuple[BenchmarkReport, List[Tuple[EpisodeResult, EpisodeTrace]]]:
    """Sampled network routes with per-intersection pass flags."""
    specs, notes = navigation_specs(runner.settings, runner.maps, FusionMode(mode))
    seeds = [spec.seed for spec in specs]
    return _run(runner, TaskKind.NAVIGATION, specs, seeds, notes, jobs, checkpoint, force)
