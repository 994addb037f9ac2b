"""Scripted traffic: participants driving a route at constant speed."""

import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from minehaul.schemas.common import Direction
from minehaul.schemas.world import MineMap, TruckParams, footprint_corners
from minehaul.services.route_service import Route, loop_route, sample_navigation_route

logger = logging.getLogger(__name__)

KMH = 1.0 / 3.6
SPEED_RANGE_KMH = (8.0, 16.0)


class Participant:
    """A truck that follows ``route`` from ``s0`` at ``speed``.

    Its pose is a pure function of time. On an open route it stops at the
    end; on a closed route it laps.
    """

    def __init__(self, route: Route, s0: float, speed: float, length: float = 13.0, width: float = 7.0):
        self.route = route
        self.s0 = s0
        self.speed = speed
        self.length = length
        self.width = width

    def s_at(self, t: float) -> float:
        return self.route.wrap_s(self.s0 + self.speed * t)

    def pose_at(self, t: float):
        return self.route.point_at(self.s_at(t))

    def footprint_at(self, t: float) -> np.ndarray:
        x, y, heading = self.pose_at(t)
        return footprint_corners(x, y, heading, self.length, self.width)


class Traffic:
    def __init__(self, participants: Optional[Sequence[Participant]] = None):
        self.participants: List[Participant] = list(participants or [])

    def __len__(self) -> int:
        return len(self.participants)

    def footprints(self, t: float) -> List[np.ndarray]:
        return [p.footprint_at(t) for p in self.participants]


def spawn_traffic(
    mine_map: MineMap,
    n: int,
    rng: np.random.Generator,
    route: Optional[Route] = None,
    ego_s: float = 0.0,
    params: Optional[TruckParams] = None,
) -> Traffic:
    """Place ``n`` participants.

    With ``route`` they share the ego route, spaced ahead of ``ego_s``;
    otherwise each drives its own route sampled on the map.

    Raises:
        ValueError: If ``n`` is negative
    """
    if n < 0:
        raise ValueError("participant count must be non-negative")
    params = params or TruckParams()
    participants = []
    for i in range(n):
        speed = float(rng.uniform(*SPEED_RANGE_KMH)) * KMH
        if route is not None:
            own = route
            s0 = ego_s + 80.0 + 60.0 * i + float(rng.uniform(0.0, 40.0))
        else:
            own = _random_route(mine_map, rng)
            s0 = float(rng.uniform(0.0, own.length))
        participants.append(Participant(own, own.wrap_s(s0), speed, params.length, params.width))
    if n:
        logger.debug(f"Spawned {n} participants", extra={"speeds": [round(p.speed, 2) for p in participants]})
    return Traffic(participants)


def _random_route(mine_map: MineMap, rng: np.random.Generator) -> Route:
    if not mine_map.intersections:
        direction = Direction.COUNTER_CLOCKWISE if rng.random() < 0.5 else Direction.CLOCKWISE
        return loop_route(mine_map, direction)
    for _ in range(20):
        found = sample_navigation_route(mine_map, rng, min_length=500.0, min_turns=0)
        if found is not None:
            return found
    raise RuntimeError(f"could not sample a participant route on map '{mine_map.name}'")


def nearest_gap(traffic: Traffic, x: float, y: float, t: float) -> float:
    """Centre distance from (x, y) to the closest participant."""
    if not traffic.participants:
        return math.inf
    return min(math.hypot(px - x, py - y) for px, py, _ in (p.pose_at(t) for p in traffic.participants))
