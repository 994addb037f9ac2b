"""Pydantic domain types shared across the simulator, learning and benchmark code."""

from minehaul.schemas.benchmark import (
    BenchmarkReport,
    EpisodeResult,
    EventRecord,
    IntersectionPass,
    IntersectionSummary,
    RouteLeg,
    TaskSpec,
)
from minehaul.schemas.common import (
    CHANNEL_RANGES,
    CHANNELS,
    ControlCommand,
    Direction,
    FusionMode,
    HighLevelCommand,
    LateralCommand,
    LongitudinalCommand,
    TaskKind,
)
from minehaul.schemas.driving import (
    DatasetManifest,
    DemoFrame,
    FilterThresholds,
    Observation,
    ThresholdReport,
    TrainingSample,
)
from minehaul.schemas.prediction import EvidentialPrediction, LossBreakdown, ModelConfig, TaskUncertainty
from minehaul.schemas.world import (
    CollisionReport,
    GnssFix,
    Intersection,
    MapEdge,
    MineMap,
    RangeScan,
    TruckParams,
    TruckState,
    TurnAnnotation,
)

__all__ = [
    "BenchmarkReport",
    "CHANNELS",
    "CHANNEL_RANGES",
    "CollisionReport",
    "ControlCommand",
    "DatasetManifest",
    "DemoFrame",
    "Direction",
    "EpisodeResult",
    "EventRecord",
    "EvidentialPrediction",
    "FilterThresholds",
    "FusionMode",
    "GnssFix",
    "HighLevelCommand",
    "Intersection",
    "IntersectionPass",
    "IntersectionSummary",
    "LateralCommand",
    "LongitudinalCommand",
    "LossBreakdown",
    "MapEdge",
    "MineMap",
    "ModelConfig",
    "Observation",
    "RangeScan",
    "RouteLeg",
    "TaskKind",
    "TaskSpec",
    "TaskUncertainty",
    "ThresholdReport",
    "TrainingSample",
    "TruckParams",
    "TruckState",
    "TurnAnnotation",
]
