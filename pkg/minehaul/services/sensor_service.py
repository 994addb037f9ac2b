"""Range-scan raycasting, GNSS sampling and the GNSS speed estimator."""

import logging
import math
from typing import Optional, Sequence

import numpy as np

from minehaul.schemas.world import GnssFix, MineMap, RangeScan, TruckState
from minehaul.services.map_service import road_geometry

logger = logging.getLogger(__name__)

R_MIN = 4.0
R_MAX = 120.0
QUANTUM = 0.2


def beam_angles(beams: int, fov: float) -> np.ndarray:
    """Beam directions relative to the truck heading.

    A full circle spaces beams without repeating the endpoint; a partial field
    of view includes both edges.
    """
    if fov >= 2.0 * math.pi - 1e-12:
        return np.linspace(-math.pi, math.pi, beams, endpoint=False)
    return np.linspace(-fov / 2.0, fov / 2.0, beams)


def beam_spacing(beams: int, fov: float) -> float:
    if fov >= 2.0 * math.pi - 1e-12:
        return 2.0 * math.pi / beams
    return fov / (beams - 1)


def quantize(ranges: np.ndarray, quantum: float = QUANTUM) -> np.ndarray:
    """Floor to the quantum grid; values already on the grid are fixed points."""
    return np.round(np.floor(ranges / quantum + 1e-6) * quantum, 6)


def finish_ranges(
    raw: np.ndarray, r_min: float = R_MIN, r_max: float = R_MAX, quantum: float = QUANTUM
) -> tuple:
    """Clamp, quantize and mask raw hit distances (inf = no hit)."""
    valid = raw <= r_max
    ranges = np.where(valid, np.clip(raw, r_min, r_max), r_max)
    return quantize(ranges, quantum), valid


def obstacle_segments(obstacles: Sequence[np.ndarray]) -> np.ndarray:
    """Edges of polygon obstacles as (N, 4) segment rows."""
    rows = []
    for corners in obstacles:
        pts = np.asarray(corners, dtype=np.float64)
        rows.append(np.hstack([pts, np.roll(pts, -1, axis=0)]))
    return np.vstack(rows) if rows else np.zeros((0, 4))


def raycast(origin: np.ndarray, angles: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """Distance along each ray to the nearest segment, inf where nothing is hit."""
    if len(segments) == 0:
        return np.full(len(angles), np.inf)
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    a = segments[:, :2]
    e = segments[:, 2:] - a
    ao = a - origin
    denom = d[:, :1] * e[None, :, 1] - d[:, 1:] * e[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ao[None, :, 0] * e[None, :, 1] - ao[None, :, 1] * e[None, :, 0]) / denom
        u = (ao[None, :, 0] * d[:, 1:] - ao[None, :, 1] * d[:, :1]) / denom
    hit = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
    return np.where(hit, t, np.inf).min(axis=1)


def cast_scan(
    state: TruckState,
    mine_map: MineMap,
    beams: int = 108,
    fov: float = math.radians(270.0),
    obstacles: Sequence[np.ndarray] = (),
    r_min: float = R_MIN,
    r_max: float = R_MAX,
    quantum: float = QUANTUM,
) -> RangeScan:
    """Raycast walls and obstacle footprints from the truck position.

    Args:
        state: Truck pose; the sensor sits at its position, facing its heading
        mine_map: Map whose walls are hit
        beams: Beam count (at least 8)
        fov: Field of view in radians, in (0, 2 pi]
        obstacles: Footprint corner arrays of other participants
        r_min: Hits closer than this report ``r_min``
        r_max: Beams without a hit within ``r_max`` are invalid
        quantum: Range grid

    Returns:
        Scan stamped with the state time
    """
    if beams < 8:
        raise ValueError("a scan needs at least 8 beams")
    if not 0.0 < fov <= 2.0 * math.pi + 1e-12:
        raise ValueError("field of view must lie in (0, 2 pi]")
    origin = np.array([state.x, state.y])
    segments = road_geometry(mine_map).segments_near(state.x, state.y, r_max)
    extra = obstacle_segments(obstacles)
    if len(extra):
        segments = np.vstack([segments, extra])
    raw = raycast(origin, state.heading + beam_angles(beams, fov), segments)
    ranges, valid = finish_ranges(raw, r_min, r_max, quantum)
    return RangeScan(beams=beams, fov=fov, ranges=ranges, valid=valid, timestamp=state.time)


def sample_gnss(
    state: TruckState, failure_prob: float, rng: np.random.Generator, noise_std: float = 0.0
) -> GnssFix:
    """One GNSS fix; lost with probability ``failure_prob``.

    Exactly one uniform draw is consumed per call (plus two normals when
    noise is enabled and the fix is valid), so streams stay aligned.
    """
    if not 0.0 <= failure_prob <= 1.0:
        raise ValueError("failure probability must lie in [0, 1]")
    if rng.random() < failure_prob:
        return GnssFix.lost(state.time)
    x, y = state.x, state.y
    if noise_std > 0.0:
        nx, ny = rng.normal(0.0, noise_std, size=2)
        x, y = x + float(nx), y + float(ny)
    return GnssFix(x=x, y=y, valid=True, timestamp=state.time)


class SpeedEstimator:
    """Finite-difference speed from consecutive valid GNSS fixes.

    When the current or previous fix is invalid the last estimate is held.
    """

    def __init__(self, initial_speed: float = 0.0):
        self.speed = float(initial_speed)
        self._last: Optional[GnssFix] = None

    def update(self, fix: GnssFix) -> float:
        if fix.valid and self._last is not None and self._last.valid:
            dt = fix.timestamp - self._last.timestamp
            if dt > 0.0:
                self.speed = math.hypot(fix.x - self._last.x, fix.y - self._last.y) / dt
        self._last = fix
        return self.speed

    def reset(self, speed: float) -> None:
        self.speed = float(speed)
        self._last = None
