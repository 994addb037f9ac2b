"""Benchmark schemas: task specs, episode results and aggregate reports."""

from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from minehaul.schemas.common import Direction, FusionMode, LateralCommand, TaskKind

REPORT_SCHEMA_VERSION = "1.0"


class RouteLeg(BaseModel):
    model_config = ConfigDict(frozen=True)

    edge: int
    reverse: bool = False


class TaskSpec(BaseModel):
    """One closed-loop episode to run."""

    model_config = ConfigDict(frozen=True)

    task: TaskKind
    map_name: str
    route: List[RouteLeg]
    route_length: float = Field(..., gt=0)
    turning_intersections: int = 0
    direction: Direction = Direction.COUNTER_CLOCKWISE
    scenario: str = Field("lap", description="Scenario class, e.g. straight / turn-left / turn-right")
    gnss_failure_prob: float = Field(0.0, ge=0, le=1)
    seed: int = 0
    mode: FusionMode = FusionMode.EVIDENTIAL
    start_s: float = 0.0
    lateral_offset: float = 0.0
    yaw_offset: float = 0.0
    initial_speed: float = Field(0.0, ge=0)
    max_time: float = Field(600.0, gt=0)
    n_traffic: int = Field(0, ge=0)
    record_trajectory: bool = False

    @model_validator(mode="after")
    def _route_constraints(self) -> "TaskSpec":
        if self.task is TaskKind.LANE_STABLE and self.route_length < 1000.0:
            raise ValueError("lane-stable routes must be at least 1000 m")
        if self.task is TaskKind.NAVIGATION:
            if self.route_length < 1000.0 or self.turning_intersections < 1:
                raise ValueError("navigation routes need 1000 m and a turning intersection")
        return self


class EventRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: str = Field(..., description="collision | intervention | gnss_loss | safety_stop")
    t: float
    odometer: float
    x: float
    y: float
    route_s: Optional[float] = Field(None, description="Unwrapped route progress at the event (m)")


class IntersectionPass(BaseModel):
    model_config = ConfigDict(frozen=True)

    intersection: int
    node: int
    command: LateralCommand
    angle: float
    sharp: bool
    passed: bool


class EpisodeResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    task: TaskKind
    mode: FusionMode
    seed: int
    direction: Direction
    scenario: str
    gnss_failure_prob: float
    route_length: float
    completion: float = Field(..., ge=0, le=1)
    collisions: int = 0
    interventions: int = 0
    safety_stop: bool = False
    recovered: Optional[bool] = None
    recovery_time: Optional[float] = None
    gnss_losses: int = 0
    max_speed: float = 0.0
    overspeed_fraction: float = 0.0
    deviation_fraction: float = 0.0
    duration: float = 0.0
    inference_calls: int = 0
    dynamics_steps: int = 0
    intersections: List[IntersectionPass] = Field(default_factory=list)
    events: List[EventRecord] = Field(default_factory=list)
    trajectory_file: Optional[str] = None

    @property
    def red_dots(self) -> int:
        """Safety events drawn on trajectory maps."""
        return self.interventions + int(self.safety_stop)


class IntersectionSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    intersection: int
    command: LateralCommand
    sharp: bool
    attempts: int
    passes: int

    @property
    def rate(self) -> float:
        return self.passes / self.attempts if self.attempts else 0.0


class BenchmarkReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    schema_version: str = REPORT_SCHEMA_VERSION
    task: TaskKind
    mode: FusionMode
    config_hash: str
    seeds: List[int]
    episodes: List[EpisodeResult]
    aggregates: Dict[str, float] = Field(default_factory=dict)
    success_by_class: Dict[str, float] = Field(default_factory=dict)
    success_by_direction: Dict[str, float] = Field(default_factory=dict)
    intersections: List[IntersectionSummary] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)
