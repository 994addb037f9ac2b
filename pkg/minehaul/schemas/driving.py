"""Driving data schemas: observations, demonstrations and training samples."""

from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from minehaul.schemas.common import (
    CHANNEL_HIGH,
    CHANNEL_LOW,
    ArrayModel,
    ControlCommand,
    FloatArray,
    HighLevelCommand,
    LateralCommand,
    LongitudinalCommand,
)
from minehaul.schemas.world import GnssFix, RangeScan

SENSOR_PERIOD = 0.1


class Observation(BaseModel):
    """One synchronized sensor frame plus the active high-level command."""

    model_config = ConfigDict(frozen=True)

    scan: RangeScan
    gnss: GnssFix
    speed: float = Field(..., ge=0, description="Speed estimate (m/s)")
    hlc: HighLevelCommand = Field(default_factory=HighLevelCommand)

    @model_validator(mode="after")
    def _synchronized(self) -> "Observation":
        if abs(self.scan.timestamp - self.gnss.timestamp) > SENSOR_PERIOD + 1e-9:
            raise ValueError("scan and fix are more than one sensor period apart")
        return self


class DemoFrame(BaseModel):
    """One recorded expert frame, serialized as a JSON Lines record."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    episode: int = Field(..., ge=0)
    index: int = Field(..., ge=0, description="Frame index within the episode")
    t: float
    s: float = Field(..., description="Odometer (m)")
    scan: RangeScan
    gnss: GnssFix
    speed: float = Field(..., ge=0)
    hlc_lat: LateralCommand
    hlc_lon: LongitudinalCommand
    steer: float = Field(..., alias="str")
    throttle: float = Field(..., alias="acc")
    brake_e: float = Field(..., alias="dec_e")
    brake_m: float = Field(..., alias="dec_m")

    @property
    def command(self) -> ControlCommand:
        return ControlCommand(
            steer=self.steer, throttle=self.throttle, brake_e=self.brake_e, brake_m=self.brake_m
        )

    @property
    def observation(self) -> Observation:
        return Observation(
            scan=self.scan,
            gnss=self.gnss,
            speed=self.speed,
            hlc=HighLevelCommand(lateral=self.hlc_lat, longitudinal=self.hlc_lon),
        )


class TrainingSample(ArrayModel):
    """Observation with K-lookahead labels for all four channels."""

    episode: int = 0
    index: int = 0
    s: float = 0.0
    scan: RangeScan
    gnss: GnssFix
    speed: float = Field(..., ge=0, description="Measured speed, also the speed-branch target (m/s)")
    hlc_lat: LateralCommand
    hlc_lon: LongitudinalCommand
    labels: FloatArray = Field(..., description="Shape (4, K) in channel order str, acc, dec_e, dec_m")
    augmented: bool = False

    @model_validator(mode="after")
    def _labels_in_range(self) -> "TrainingSample":
        if self.labels.ndim != 2 or self.labels.shape[0] != 4:
            raise ValueError("labels must have shape (4, K)")
        low, high = CHANNEL_LOW[:, None], CHANNEL_HIGH[:, None]
        if np.any(self.labels < low) or np.any(self.labels > high) or not np.all(np.isfinite(self.labels)):
            raise ValueError("labels must lie within the channel ranges")
        return self

    @property
    def gnss_valid(self) -> bool:
        return self.gnss.valid

    @property
    def k(self) -> int:
        return int(self.labels.shape[1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrainingSample):
            return NotImplemented
        return self.model_dump(mode="json") == other.model_dump(mode="json")


class FilterThresholds(BaseModel):
    """Bias-filter bounds in normalized command units."""

    model_config = ConfigDict(frozen=True)

    steer_low: float
    steer_up: float
    throttle_up: float

    @model_validator(mode="after")
    def _ordered(self) -> "FilterThresholds":
        values = (self.steer_low, self.steer_up, self.throttle_up)
        if not all(np.isfinite(values)):
            raise ValueError("thresholds must be finite")
        if self.steer_low > self.steer_up:
            raise ValueError("steering lower bound exceeds upper bound")
        return self


class ThresholdReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    confidence: float
    thresholds: FilterThresholds
    quantiles: Dict[str, float]
    total_frames: int
    removed_frames: int
    removed_by_steer: int
    removed_by_throttle: int

    @property
    def removed_fraction(self) -> float:
        return self.removed_frames / self.total_frames if self.total_frames else 0.0


class AugmentationParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    enabled: bool
    copies: int
    scale: Tuple[float, float]
    yaw_deg: float
    gnss_drop: float
    k_yaw: float


class DatasetManifest(BaseModel):
    """Sidecar describing how a JSON Lines dataset was produced."""

    model_config = ConfigDict(frozen=True)

    schema_version: int = 1
    kind: str = Field(..., description="'demonstrations' or 'training'")
    seed: int
    config_hash: str
    count: int
    k_lookahead: Optional[int] = None
    spacing_m: Optional[float] = None
    thresholds: Optional[FilterThresholds] = None
    augmentation: Optional[AugmentationParams] = None
    episodes: List[int] = Field(default_factory=list)
