"""Shared schemas: command enums, channel layout and the control tuple."""

from enum import Enum
from typing import Annotated, Dict, Tuple

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer


def _as_float_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _as_bool_array(value) -> np.ndarray:
    return np.asarray(value, dtype=bool)


def _to_list(array: np.ndarray) -> list:
    return array.tolist()


# numpy arrays inside schemas; serialized as nested lists in JSON.
FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(_to_list, return_type=list, when_used="json"),
]
BoolArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_bool_array),
    PlainSerializer(_to_list, return_type=list, when_used="json"),
]


class ArrayModel(BaseModel):
    """Frozen model that may hold numpy arrays."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


class LateralCommand(str, Enum):
    STRAIGHT = "straight"
    TURN_LEFT = "turn-left"
    TURN_RIGHT = "turn-right"

    @property
    def branch(self) -> int:
        return LATERAL_ORDER.index(self)


class LongitudinalCommand(str, Enum):
    ACCELERATE = "accelerate"
    MAINTAIN = "maintain"
    DECELERATE = "decelerate"

    @property
    def branch(self) -> int:
        return LONGITUDINAL_ORDER.index(self)


LATERAL_ORDER = (LateralCommand.STRAIGHT, LateralCommand.TURN_LEFT, LateralCommand.TURN_RIGHT)
LONGITUDINAL_ORDER = (
    LongitudinalCommand.ACCELERATE,
    LongitudinalCommand.MAINTAIN,
    LongitudinalCommand.DECELERATE,
)


class FusionMode(str, Enum):
    INSTANTANEOUS = "instantaneous"
    UNIFORM = "uniform"
    EVIDENTIAL = "evidential"


class TaskKind(str, Enum):
    LANE_STABLE = "lane-stable"
    DISTURBANCE = "disturbance"
    NAVIGATION = "navigation"


class Direction(str, Enum):
    COUNTER_CLOCKWISE = "counter-clockwise"
    CLOCKWISE = "clockwise"


# Command channels in array order.
CHANNELS: Tuple[str, ...] = ("str", "acc", "dec_e", "dec_m")
CHANNEL_RANGES: Dict[str, Tuple[float, float]] = {
    "str": (-1.0, 1.0),
    "acc": (0.0, 1.0),
    "dec_e": (0.0, 1.0),
    "dec_m": (0.0, 1.0),
}
CHANNEL_LOW = np.array([CHANNEL_RANGES[c][0] for c in CHANNELS])
CHANNEL_HIGH = np.array([CHANNEL_RANGES[c][1] for c in CHANNELS])


class ControlCommand(BaseModel):
    """Four-channel actuator command (a_str, a_acc, a_dec_e, a_dec_m).

    Steering is normalized to [-1, 1] (positive turns left); the three
    longitudinal channels are in [0, 1]. Values are not range-checked on
    construction so that a misbehaving policy can still be represented and
    rejected downstream.
    """

    model_config = ConfigDict(frozen=True)

    steer: float = Field(0.0, description="Normalized steering, positive left")
    throttle: float = Field(0.0, description="Normalized traction command")
    brake_e: float = Field(0.0, description="Normalized electric-brake command")
    brake_m: float = Field(0.0, description="Normalized mechanical-brake command")

    def as_array(self) -> np.ndarray:
        return np.array([self.steer, self.throttle, self.brake_e, self.brake_m], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "ControlCommand":
        steer, throttle, brake_e, brake_m = (float(v) for v in values)
        return cls(steer=steer, throttle=throttle, brake_e=brake_e, brake_m=brake_m)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_array())))

    def clipped(self) -> "ControlCommand":
        return ControlCommand.from_array(np.clip(self.as_array(), CHANNEL_LOW, CHANNEL_HIGH))


class HighLevelCommand(BaseModel):
    """Navigation hint selecting one lateral and one longitudinal branch."""

    model_config = ConfigDict(frozen=True)

    lateral: LateralCommand = LateralCommand.STRAIGHT
    longitudinal: LongitudinalCommand = LongitudinalCommand.MAINTAIN
