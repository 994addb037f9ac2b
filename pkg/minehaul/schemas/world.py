"""World schemas: maps, truck state and parameters, sensor frames."""

import math
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from minehaul.schemas.common import ArrayModel, BoolArray, FloatArray, LateralCommand

Point = Tuple[float, float]


class MapEdge(BaseModel):
    """A road segment between two nodes."""

    model_config = ConfigDict(frozen=True)

    id: int
    from_node: int
    to_node: int
    centerline: List[Point] = Field(..., description="Centerline polyline (m)")
    width: float = Field(..., gt=0, description="Road width (m)")
    bidirectional: bool = True

    @field_validator("centerline")
    @classmethod
    def _positive_length(cls, v: List[Point]) -> List[Point]:
        if len(v) < 2:
            raise ValueError("centerline needs at least two points")
        pts = np.asarray(v, dtype=np.float64)
        steps = np.hypot(*np.diff(pts, axis=0).T)
        if not np.all(steps > 0):
            raise ValueError("centerline arc length must be strictly increasing")
        return v

    @property
    def length(self) -> float:
        pts = np.asarray(self.centerline)
        return float(np.hypot(*np.diff(pts, axis=0).T).sum())


class TurnAnnotation(BaseModel):
    """One way of passing through an intersection."""

    model_config = ConfigDict(frozen=True)

    from_edge: int
    to_edge: int
    angle: float = Field(..., description="Signed heading change, positive left (rad)")
    command: LateralCommand
    allowed: bool


class Intersection(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    node: int
    edges: List[int]
    turns: List[TurnAnnotation]

    @property
    def sharp(self) -> bool:
        """Whether some allowed turn exceeds 60 degrees."""
        return any(t.allowed and abs(t.angle) > math.radians(60.0) for t in self.turns)


class MineMap(BaseModel):
    """Haul-road network with derived wall polylines."""

    model_config = ConfigDict(frozen=True)

    name: str
    nodes: List[Point]
    edges: List[MapEdge]
    intersections: List[Intersection] = Field(default_factory=list)
    walls: List[List[Point]] = Field(default_factory=list, description="Road-boundary polylines (m)")
    sites: Dict[str, List[int]] = Field(default_factory=dict, description="Loading/dumping node ids")
    junction_margin: float = 4.0

    _geometry: Any = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _edges_reference_nodes(self) -> "MineMap":
        n = len(self.nodes)
        for edge in self.edges:
            if not (0 <= edge.from_node < n and 0 <= edge.to_node < n):
                raise ValueError(f"edge {edge.id} references an unknown node")
        return self

    @property
    def total_length(self) -> float:
        return sum(edge.length for edge in self.edges)

    def edge(self, edge_id: int) -> MapEdge:
        return self.edges[edge_id]


class TruckParams(BaseModel):
    """Physical parameters of the ego truck."""

    model_config = ConfigDict(frozen=True)

    wheelbase: float = Field(6.0, gt=0)
    length: float = Field(13.0, gt=0)
    width: float = Field(7.0, gt=0)
    max_steer: float = Field(math.radians(35.0), gt=0, description="rad")
    max_accel: float = Field(1.0, gt=0)
    e_brake_gain: float = Field(1.2, gt=0)
    m_brake_gain: float = Field(2.0, gt=0)
    e_brake_fade_speed: float = Field(1.39, gt=0)
    drag: float = Field(0.02, ge=0)

    @classmethod
    def from_section(cls, section) -> "TruckParams":
        return cls(
            wheelbase=section.wheelbase,
            length=section.length,
            width=section.width,
            max_steer=math.radians(section.max_steer_deg),
            max_accel=section.max_accel,
            e_brake_gain=section.e_brake_gain,
            m_brake_gain=section.m_brake_gain,
            e_brake_fade_speed=section.e_brake_fade_speed,
            drag=section.drag,
        )


class TruckState(BaseModel):
    """Snapshot of the ego truck. ``x, y`` is the footprint centre."""

    model_config = ConfigDict(frozen=True)

    x: float = 0.0
    y: float = 0.0
    heading: float = Field(0.0, description="rad, counter-clockwise from +x")
    speed: float = Field(0.0, ge=0, description="m/s")
    steering: float = Field(0.0, description="Road-wheel angle (rad)")
    odometer: float = Field(0.0, description="Distance travelled (m)")
    time: float = Field(0.0, description="Simulation time (s)")
    route_s: Optional[float] = Field(None, description="Progress hint along the active route (m)")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def footprint(self, params: TruckParams) -> np.ndarray:
        """Corners of the oriented footprint rectangle, counter-clockwise."""
        return footprint_corners(self.x, self.y, self.heading, params.length, params.width)


def footprint_corners(x: float, y: float, heading: float, length: float, width: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


class RangeScan(ArrayModel):
    """Planar range scan; invalid beams carry ``r_max``."""

    beams: int = Field(..., ge=1)
    fov: float = Field(..., gt=0, description="rad")
    ranges: FloatArray
    valid: BoolArray
    timestamp: float = 0.0

    @model_validator(mode="after")
    def _lengths(self) -> "RangeScan":
        if self.ranges.shape != (self.beams,) or self.valid.shape != (self.beams,):
            raise ValueError("ranges and mask must have one entry per beam")
        return self

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RangeScan):
            return NotImplemented
        return (
            self.beams == other.beams
            and self.fov == other.fov
            and self.timestamp == other.timestamp
            and np.array_equal(self.ranges, other.ranges)
            and np.array_equal(self.valid, other.valid)
        )


class GnssFix(BaseModel):
    """Position fix in the local frame; ``(0, 0)`` when invalid."""

    model_config = ConfigDict(frozen=True)

    x: float = 0.0
    y: float = 0.0
    altitude: float = 0.0
    valid: bool = True
    timestamp: float = 0.0

    @model_validator(mode="after")
    def _sentinel(self) -> "GnssFix":
        if not self.valid and (self.x != 0.0 or self.y != 0.0):
            raise ValueError("invalid fixes must carry the (0, 0) sentinel")
        return self

    @classmethod
    def lost(cls, timestamp: float) -> "GnssFix":
        return cls(x=0.0, y=0.0, valid=False, timestamp=timestamp)


class CollisionReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    collided: bool
    lateral_error: float = Field(..., description="Signed offset from the centerline, positive left (m)")
    heading_error: float = Field(..., description="Heading minus centerline tangent (rad)")
    wall_contact: bool = False
    participant_contact: bool = False
